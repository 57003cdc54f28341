"""Strang-split time integration, conservation monitoring and blow-up detection."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Protocol

import numpy as np

from .errors import Diverged, FitFailed, StepUnderflow
from .spectral import (
    Field,
    ModelParams,
    energy,
    frac_multiplier,
    mass,
    rescale,
    make_grid,
    sobolev_seminorm,
)

log = logging.getLogger(__name__)

DRIFT_EPS = 1e-30


@dataclass
class ConservationLedger:
    mass0: float
    energy0: float
    mass_drift: float = 0.0
    energy_drift: float = 0.0
    max_mass_drift: float = 0.0
    max_energy_drift: float = 0.0
    hs_history: list = dc_field(default_factory=list)  # (t, hs, linf)

    @classmethod
    def start(cls, f: Field, p: ModelParams, t: float = 0.0) -> "ConservationLedger":
        led = cls(mass0=mass(f), energy0=energy(f, p))
        led.hs_history.append((t, sobolev_seminorm(f, p.s), float(np.max(np.abs(f.values)))))
        return led

    def update(self, t: float, m: float, e: float, hs: float, linf: float) -> None:
        self.mass_drift = abs(m - self.mass0) / max(abs(self.mass0), DRIFT_EPS)
        self.energy_drift = abs(e - self.energy0) / max(abs(self.energy0), DRIFT_EPS)
        self.max_mass_drift = max(self.max_mass_drift, self.mass_drift)
        self.max_energy_drift = max(self.max_energy_drift, self.energy_drift)
        self.hs_history.append((t, hs, linf))

    def summary(self) -> dict:
        return {
            "mass0": self.mass0,
            "energy0": self.energy0,
            "mass_drift": self.mass_drift,
            "energy_drift": self.energy_drift,
            "max_mass_drift": self.max_mass_drift,
            "max_energy_drift": self.max_energy_drift,
            "samples": len(self.hs_history),
        }


@dataclass
class SimulationState:
    field: Field
    t: float
    params: ModelParams
    step_count: int = 0
    dt_current: float = 1e-3
    monitors: ConservationLedger | None = None

    @classmethod
    def initial(cls, u0: Field, p: ModelParams, t: float = 0.0, dt: float = 1e-3) -> "SimulationState":
        return cls(field=u0, t=t, params=p, dt_current=dt, monitors=ConservationLedger.start(u0, p, t))


@dataclass(frozen=True)
class StepPolicy:
    """dt = min(dt_max, c_cfl / (||u||_inf^alpha + linear_weight * kmax^{2s}))."""

    dt_max: float = 5e-4
    c_cfl: float = 0.02
    dt_min: float = 1e-12
    linear_weight: float = 0.0


@dataclass(frozen=True)
class Triggers:
    hs_cap_factor: float = 1e3
    hs_cap: float | None = None
    mass_drift: float = 1e-6
    # fraction of spectral mass in the outer third of the resolved band
    resolution: float | None = 1e-6


class OutcomeKind(str, enum.Enum):
    COMPLETED = "Completed"
    BLOWUP = "BlowupDetected"
    DIVERGED = "Diverged"


@dataclass
class EvolutionOutcome:
    kind: OutcomeKind
    t_final: float
    t_star_estimate: float | None
    reason: str
    state: SimulationState | None = None
    rate: dict | None = None

    def __post_init__(self):
        if self.kind is OutcomeKind.BLOWUP and self.t_star_estimate is None:
            raise ValueError("BlowupDetected outcome needs a t_star estimate")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "t_final": self.t_final,
            "t_star_estimate": self.t_star_estimate,
            "reason": self.reason,
            "rate": self.rate,
        }


class RecordSink(Protocol):
    def emit(self, record: dict, state: SimulationState) -> None: ...


class ListSink:
    """Keeps records in memory, and optionally a copy of the field every `keep_every` samples."""

    def __init__(self, keep_every: int = 0):
        self.records: list[dict] = []
        self.fields: list[tuple[float, Field]] = []
        self.keep_every = keep_every

    def emit(self, record: dict, state: SimulationState) -> None:
        self.records.append(record)
        if self.keep_every and (len(self.records) - 1) % self.keep_every == 0:
            self.fields.append((state.t, state.field))


class JsonlSink:
    def __init__(self, fh):
        self.fh = fh

    def emit(self, record: dict, state: SimulationState) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")


class TeeSink:
    def __init__(self, *sinks):
        self.sinks = sinks

    def emit(self, record: dict, state: SimulationState) -> None:
        for s in self.sinks:
            s.emit(record, state)


def _nonlinear_phase(u: np.ndarray, p: ModelParams, dt: float) -> np.ndarray:
    return u * np.exp((-1j * p.mu * dt) * np.abs(u) ** p.alpha)


def _high_modes(shape: tuple) -> np.ndarray:
    """Modes above 2/3 of the per-axis Nyquist index."""
    n = shape[0]
    idx = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    high = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        shp = [1] * len(shape)
        shp[ax] = n
        high |= (idx > n / 3).reshape(shp)
    return high


def _strang(u: np.ndarray, table: np.ndarray, p: ModelParams, dt: float,
            keep: np.ndarray | None = None) -> np.ndarray:
    u = _nonlinear_phase(u, p, 0.5 * dt)
    prop = np.exp(-1j * dt * table)
    if keep is not None:
        prop = prop * keep
    u = np.fft.ifftn(prop * np.fft.fftn(u))
    return _nonlinear_phase(u, p, 0.5 * dt)


def strang_step(st: SimulationState, dt: float, dealias: bool = False) -> SimulationState:
    """One step: half nonlinear phase, exact dispersive flow, half nonlinear phase.

    With `dealias` the 2/3 rule is applied inside the linear substep.  Mass is
    then no longer conserved exactly.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return replace(st)
    table = frac_multiplier(st.field.grid, st.params.s).table
    keep = ~_high_modes(table.shape) if dealias else None
    u = _strang(st.field.values, table, st.params, dt, keep)
    if not np.all(np.isfinite(u)):
        raise Diverged(f"non-finite field at t={st.t + dt:g}")
    return replace(
        st,
        field=Field(st.field.grid, u),
        t=st.t + dt,
        step_count=st.step_count + 1,
        dt_current=dt,
    )


def adaptive_dt(st: SimulationState, policy: StepPolicy = StepPolicy()) -> float:
    return _adaptive_dt(st.field.values, st.params, st.field.grid.kmax, policy)


def _adaptive_dt(u: np.ndarray, p: ModelParams, kmax: float, policy: StepPolicy) -> float:
    linf = float(np.max(np.abs(u)))
    rate = linf**p.alpha + policy.linear_weight * kmax ** (2 * p.s)
    dt = policy.dt_max if rate == 0 else min(policy.dt_max, policy.c_cfl / rate)
    if dt < policy.dt_min:
        raise StepUnderflow(dt, policy.dt_min)
    return dt


def resolution_fraction(u: np.ndarray) -> float:
    """Share of spectral mass carried by modes above 2/3 of the per-axis Nyquist index."""
    uh = np.abs(np.fft.fftn(u)) ** 2
    high = _high_modes(u.shape)
    total = uh.sum()
    return float(uh[high].sum() / total) if total > 0 else 0.0


def _record(st: SimulationState, dt: float) -> dict:
    f = st.field
    p = st.params
    return {
        "t": st.t,
        "mass": mass(f),
        "energy": energy(f, p),
        "hs": sobolev_seminorm(f, p.s),
        "linf": float(np.max(np.abs(f.values))),
        "dt": dt,
    }


def evolve(
    st: SimulationState,
    t_end: float,
    sample_every: int = 10,
    sink: RecordSink | None = None,
    policy: StepPolicy = StepPolicy(),
    triggers: Triggers = Triggers(),
    fixed_dt: float | None = None,
    tail_fraction: float = 0.3,
    max_steps: int | None = None,
    dealias: bool = False,
) -> EvolutionOutcome:
    """Advance `st` in place to t_end or until a blow-up trigger fires."""
    if not t_end > st.t:
        raise ValueError("t_end must exceed the current time")
    p = st.params
    g = st.field.grid
    if st.monitors is None:
        st.monitors = ConservationLedger.start(st.field, p, st.t)
    led = st.monitors
    hs0 = led.hs_history[0][1]
    hs_cap = triggers.hs_cap if triggers.hs_cap is not None else triggers.hs_cap_factor * hs0
    table = frac_multiplier(g, p.s).table
    keep = ~_high_modes(table.shape) if dealias else None
    u = np.array(st.field.values)
    dt = st.dt_current
    reason = None
    steps_here = 0
    if sink is not None:
        sink.emit(_record(st, dt), st)

    def sync():
        st.field = Field(g, u)

    while st.t < t_end:
        try:
            dt = fixed_dt if fixed_dt is not None else _adaptive_dt(u, p, g.kmax, policy)
        except StepUnderflow as exc:
            reason = f"step underflow: {exc}"
            break
        dt = min(dt, t_end - st.t)
        u = _strang(u, table, p, dt, keep)
        if not np.all(np.isfinite(u)):
            return EvolutionOutcome(OutcomeKind.DIVERGED, st.t, None, f"non-finite field after t={st.t:g}", st)
        st.t += dt
        st.step_count += 1
        steps_here += 1
        st.dt_current = dt
        last = st.t >= t_end or (max_steps is not None and steps_here >= max_steps)
        if st.step_count % sample_every == 0 or last:
            sync()
            rec = _record(st, dt)
            led.update(st.t, rec["mass"], rec["energy"], rec["hs"], rec["linf"])
            if sink is not None:
                sink.emit(rec, st)
            if rec["hs"] > hs_cap:
                reason = f"Hs seminorm {rec['hs']:.4g} exceeded cap {hs_cap:.4g}"
            elif led.mass_drift > triggers.mass_drift:
                reason = f"mass drift {led.mass_drift:.2e} exceeded {triggers.mass_drift:.0e}"
            elif triggers.resolution is not None and resolution_fraction(u) > triggers.resolution:
                reason = "solution no longer resolved by the grid"
            if reason:
                break
        if max_steps is not None and steps_here >= max_steps:
            break
    sync()
    if reason is None:
        return EvolutionOutcome(OutcomeKind.COMPLETED, st.t, None, "reached t_end", st)
    from .diagnostics import rate_fit

    rate = None
    try:
        C, t_star, pexp, resid = rate_fit(led.hs_history, tail_fraction)
        rate = {"C": C, "t_star": t_star, "p": pexp, "resid": resid}
    except FitFailed as exc:
        log.info("rate fit failed: %s", exc)
        t_star = st.t
    return EvolutionOutcome(OutcomeKind.BLOWUP, st.t, t_star, reason, st, rate)


class ScenarioTag(str, enum.Enum):
    SUBCRITICAL_MASS = "SubcriticalMass"
    MINIMAL_MASS = "MinimalMass"
    NEGATIVE_ENERGY = "NegativeEnergy"
    INDETERMINATE = "Indeterminate"


def classify_initial_data(u0: Field, p: ModelParams, gs, rel_tol: float = 1e-6) -> ScenarioTag:
    """Tag the initial data by the mass/energy thresholds set by Q."""
    if not p.mass_critical():
        raise ValueError("classification needs mass-critical parameters")
    m = mass(u0)
    if abs(m - gs.mass_q) <= rel_tol * gs.mass_q:
        return ScenarioTag.MINIMAL_MASS
    if m < gs.mass_q:
        return ScenarioTag.SUBCRITICAL_MASS
    if energy(u0, p) < 0:
        return ScenarioTag.NEGATIVE_ENERGY
    return ScenarioTag.INDETERMINATE


def zoom(st: SimulationState, factor: float = 0.5) -> SimulationState:
    """Restart on a box shrunk by `factor` (same n), i.e. refine resolution around the origin.

    The state is interpolated onto the smaller box; any mass outside it is lost,
    so callers should check the mass before and after.
    """
    g = st.field.grid
    target = make_grid(g.d, g.n, g.half_length * factor)
    # rescale with lam=1 onto a different grid is plain band-limited resampling
    f = rescale(st.field, 1.0, target, tail_tol=1.0)
    led = ConservationLedger.start(f, st.params, st.t)
    led.hs_history = list(st.monitors.hs_history) if st.monitors else led.hs_history
    return replace(st, field=f, monitors=led)
