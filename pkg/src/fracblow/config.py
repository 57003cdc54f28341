"""Flat key=value run configuration, its validation, and the built-in presets."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .spectral import Grid, ModelParams, make_grid

EMIT_CHOICES = ("concentration", "profile", "rate")
EXPERIMENTS = ("evolve", "decomposition")


@dataclass(frozen=True)
class ConfigProblem:
    line: int  # 0 when the problem is not tied to a line
    kind: str  # UnknownKey, TypeError, RangeError, MissingKey, DuplicateKey, SyntaxError
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line else "config"
        return f"{where}: {self.kind}: {self.message}"


@dataclass(frozen=True)
class RunConfig:
    d: int
    s: float
    alpha: float
    n: int
    box: float
    mu: int = -1
    mass_critical: bool = False
    experiment: str = "evolve"
    label: str = "run"
    # initial data
    initial: str = "Q"
    normalize: float | None = None
    perturb: float = 0.0
    perturb_modes: int = 16
    radial: bool = False
    # schedule
    t_end: float = 1.0
    dt_max: float = 5e-4
    c_cfl: float = 0.02
    sample_every: int = 10
    keep_every: int = 10
    # triggers
    hs_cap: float | None = None
    hs_cap_factor: float = 1e3
    dt_min: float = 1e-12
    mass_drift: float = 1e-6
    resolution: float | None = 1e-6
    dealias: bool = False
    # diagnostics
    window_epsilon: float = 0.1
    tail_fraction: float = 0.3
    profile_n: int = 1024
    profile_box: float = 16.0
    emit: tuple[str, ...] = EMIT_CHOICES
    fatal_hypothesis: bool = False
    # decomposition fixtures
    amplitudes: tuple[float, ...] = (1.0, 0.5)
    rates: tuple[int, ...] = (16, -16)
    members: int = 40
    levels: int = 4
    smoothing: float = 2.0
    q: float = 4.0
    seed: int = 0

    @property
    def model(self) -> ModelParams:
        return ModelParams(d=self.d, s=self.s, alpha=self.alpha, mu=self.mu)

    @property
    def grid(self) -> Grid:
        return make_grid(self.d, self.n, self.box)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


REQUIRED = ("d", "s", "n", "box")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "off", "") else float(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _emit(text: str) -> tuple[str, ...]:
    items = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in items if t not in EMIT_CHOICES]
    if bad:
        raise ValueError(f"unknown emit entries {bad}; choose from {list(EMIT_CHOICES)}")
    return items


_PARSERS = {
    "d": int,
    "s": float,
    "alpha": float,
    "n": int,
    "box": float,
    "mu": int,
    "mass_critical": _bool,
    "experiment": str,
    "label": str,
    "initial": str,
    "normalize": _opt_float,
    "perturb": float,
    "perturb_modes": int,
    "radial": _bool,
    "t_end": float,
    "dt_max": float,
    "c_cfl": float,
    "sample_every": int,
    "keep_every": int,
    "hs_cap": _opt_float,
    "hs_cap_factor": float,
    "dt_min": float,
    "mass_drift": float,
    "resolution": _opt_float,
    "dealias": _bool,
    "window_epsilon": float,
    "tail_fraction": float,
    "profile_n": int,
    "profile_box": float,
    "emit": _emit,
    "fatal_hypothesis": _bool,
    "amplitudes": _floats,
    "rates": _ints,
    "members": int,
    "levels": int,
    "smoothing": float,
    "q": float,
    "seed": int,
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def _positive(v):
    return v is None or v > 0


_RANGES = {
    "d": (lambda v: v in (1, 2, 3), "must be 1, 2 or 3"),
    "s": (lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "alpha": (lambda v: v > 0, "must be positive"),
    "n": (lambda v: v >= 8 and v & (v - 1) == 0, "must be a power of two >= 8"),
    "box": (_positive, "must be positive"),
    "mu": (lambda v: v in (-1, 1), "must be -1 or +1"),
    "experiment": (lambda v: v in EXPERIMENTS, f"must be one of {list(EXPERIMENTS)}"),
    "normalize": (_positive, "must be positive"),
    "perturb": (lambda v: v >= 0, "must be nonnegative"),
    "perturb_modes": (lambda v: v >= 1, "must be at least 1"),
    "t_end": (_positive, "must be positive"),
    "dt_max": (_positive, "must be positive"),
    "c_cfl": (_positive, "must be positive"),
    "sample_every": (lambda v: v >= 1, "must be at least 1"),
    "keep_every": (lambda v: v >= 0, "must be nonnegative"),
    "hs_cap": (_positive, "must be positive"),
    "hs_cap_factor": (lambda v: v > 1, "must exceed 1"),
    "dt_min": (_positive, "must be positive"),
    "mass_drift": (_positive, "must be positive"),
    "resolution": (_positive, "must be positive"),
    "tail_fraction": (lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "profile_n": (lambda v: v >= 8 and v & (v - 1) == 0, "must be a power of two >= 8"),
    "profile_box": (_positive, "must be positive"),
    "members": (lambda v: v >= 2, "must be at least 2"),
    "levels": (lambda v: v >= 1, "must be at least 1"),
    "smoothing": (_positive, "must be positive"),
    "q": (lambda v: v > 2, "must exceed 2"),
}

# names and functions an `initial` expression may use
_EXPR_FUNCS = {
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "cosh": np.cosh,
    "sech": lambda z: 1.0 / np.cosh(z),
}
_EXPR_NAMES = {"x", "y", "z", "r", "Q", "pi", "I"}
_EXPR_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def check_expression(expr: str) -> None:
    """Raise ValueError unless `expr` is arithmetic over the allowed names and functions."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _EXPR_NODES):
            raise ValueError(f"{type(node).__name__} is not allowed in initial expressions")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _EXPR_FUNCS):
            raise ValueError("only exp, sqrt, abs, sin, cos, tanh, cosh, sech may be called")
        if isinstance(node, ast.Name) and node.id not in _EXPR_NAMES and node.id not in _EXPR_FUNCS:
            raise ValueError(f"unknown name {node.id!r} in initial expression")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, complex)):
            raise ValueError("only numeric constants are allowed")


def eval_expression(expr: str, grid: Grid, q_values: np.ndarray | None) -> np.ndarray:
    check_expression(expr)
    names = dict(zip("xyz", grid.coords))
    names.update(r=grid.radius, pi=math.pi, I=1j, **_EXPR_FUNCS)
    if q_values is not None:
        names["Q"] = q_values
    elif "Q" in expr:
        raise ValueError("expression uses Q but no ground state is available")
    code = compile(ast.parse(expr, mode="eval"), "<initial>", "eval")
    out = eval(code, {"__builtins__": {}}, names)  # names and nodes are whitelisted above
    return np.broadcast_to(np.asarray(out, dtype=np.complex128), grid.shape)


def initial_is_file(cfg: RunConfig) -> bool:
    return cfg.initial.startswith("file:")


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    """Parse key=value lines ('#' starts a comment); every problem is reported at once."""
    problems: list[ConfigProblem] = []
    values: dict = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(ConfigProblem(lineno, "SyntaxError", f"expected key=value, got {line!r}"))
            continue
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in _PARSERS:
            problems.append(ConfigProblem(lineno, "UnknownKey", f"unknown key {key!r}"))
            continue
        if key in seen:
            problems.append(ConfigProblem(lineno, "DuplicateKey", f"{key!r} already set on line {seen[key]}"))
            continue
        seen[key] = lineno
        try:
            v = _PARSERS[key](val)
        except ValueError as exc:
            problems.append(ConfigProblem(lineno, "TypeError", f"{key}: {exc}"))
            continue
        rule = _RANGES.get(key)
        if rule is not None and not rule[0](v):
            problems.append(ConfigProblem(lineno, "RangeError", f"{key}={val} {rule[1]}"))
            continue
        values[key] = v

    for key in REQUIRED:
        if key not in values and key not in seen:
            problems.append(ConfigProblem(0, "MissingKey", f"{key} is required"))

    crit = values.get("mass_critical", False)
    if crit and "d" in values and "s" in values:
        a = 4.0 * values["s"] / values["d"]
        if "alpha" in values and abs(values["alpha"] - a) > 1e-12:
            problems.append(ConfigProblem(seen["alpha"], "RangeError",
                                          f"alpha={values['alpha']} contradicts mass_critical (4s/d = {a})"))
        values["alpha"] = a
    elif "alpha" not in values and "alpha" not in seen:
        problems.append(ConfigProblem(0, "MissingKey", "alpha is required unless mass_critical=true"))

    if "window_epsilon" in values and "s" in values:
        eps = values["window_epsilon"]
        if not 0 < eps < 1 / (2 * values["s"]):
            problems.append(ConfigProblem(seen["window_epsilon"], "RangeError",
                                          f"window_epsilon must lie in (0, 1/(2s))"))
    if "initial" in values:
        init = values["initial"]
        if init.startswith("file:"):
            path = Path(init[5:])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                problems.append(ConfigProblem(seen["initial"], "RangeError", f"initial file {path} does not exist"))
        else:
            try:
                check_expression(init)
            except ValueError as exc:
                problems.append(ConfigProblem(seen["initial"], "TypeError", str(exc)))
    if "amplitudes" in values or "rates" in values:
        na = len(values.get("amplitudes", RunConfig.amplitudes))
        nr = len(values.get("rates", RunConfig.rates))
        if na != nr:
            problems.append(ConfigProblem(seen.get("rates", seen.get("amplitudes", 0)), "RangeError",
                                          f"{na} amplitudes but {nr} rates"))

    if problems:
        raise ConfigError(problems)
    return RunConfig(**values)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(t) for t in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse_config(serialize_config(c)) == c."""
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


PRESETS = {
    "subcritical": """
label = subcritical
d = 1
s = 0.6
mass_critical = true
n = 4096
box = 32
initial = Q
normalize = 0.9
t_end = 50
dt_max = 0.005
sample_every = 20
keep_every = 50
""",
    "blowup-1.2Q": """
label = blowup-1.2Q
d = 1
s = 0.6
mass_critical = true
n = 16384
box = 32
initial = 1.2*Q
t_end = 2
dt_max = 0.001
sample_every = 10
keep_every = 5
""",
    "near-minimal": """
label = near-minimal
d = 1
s = 0.6
mass_critical = true
n = 16384
box = 32
initial = Q
normalize = 1.005
perturb = 0.01
seed = 1
t_end = 20
dt_max = 0.001
sample_every = 10
keep_every = 10
""",
    "decomposition-synthetic": """
label = decomposition-synthetic
experiment = decomposition
d = 1
s = 0.6
mass_critical = true
n = 2048
box = 64
amplitudes = 1, 0.7, 0.4
rates = 15, -15, 0
members = 40
levels = 4
smoothing = 2
q = 4
""",
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return parse_config(PRESETS[name])
