"""Field snapshots on disk.

A `.fld` file is one line of JSON (d, n, half_length, s, alpha, mu, time)
followed by the samples as little-endian interleaved (re, im) float64 in
row-major order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import Field, ModelParams, make_grid

SUFFIX = ".fld"
_DTYPE = np.dtype("<c16")


@dataclass
class Snapshot:
    field: Field
    params: ModelParams | None = None
    time: float = 0.0

    def header(self) -> dict:
        g = self.field.grid
        p = self.params
        return {
            "d": g.d,
            "n": g.n,
            "half_length": g.half_length,
            "s": None if p is None else p.s,
            "alpha": None if p is None else p.alpha,
            "mu": None if p is None else p.mu,
            "time": float(self.time),
        }


def write_field(path, f: Field, params: ModelParams | None = None, time: float = 0.0) -> Path:
    path = Path(path)
    head = json.dumps(Snapshot(f, params, time).header(), sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(head.encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(f.values, dtype=_DTYPE).tobytes(order="C"))
    return path


def read_field(path) -> Snapshot:
    with open(path, "rb") as fh:
        head = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    g = make_grid(head["d"], head["n"], head["half_length"])
    expected = g.n**g.d * _DTYPE.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: payload has {len(raw)} bytes, header implies {expected}")
    vals = np.frombuffer(raw, dtype=_DTYPE).reshape(g.shape)
    params = None
    if head.get("s") is not None:
        params = ModelParams(d=g.d, s=head["s"], alpha=head["alpha"], mu=head["mu"])
    return Snapshot(Field(g, vals), params, float(head.get("time", 0.0)))


def read_sequence(directory) -> list[Snapshot]:
    """All snapshots in a directory, in file-name order."""
    paths = sorted(Path(directory).glob("*" + SUFFIX))
    if not paths:
        raise FileNotFoundError(f"no {SUFFIX} files in {directory}")
    return [read_field(p) for p in paths]
