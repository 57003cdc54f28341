"""Observables on blow-up solutions: scale normalization, rescaled profiles,
concentration windows, rate fits and the distance to the ground-state orbit."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import FitFailed, TailMassEscape
from .evolution import SimulationState
from .ground_state import GroundState
from .spectral import (
    Field,
    Grid,
    ModelParams,
    frac_multiplier,
    hs_norm,
    inner,
    mass,
    rescale,
    shift,
    sobolev_seminorm,
    tail_fraction,
)


def rate_fit(history, tail_fraction: float = 0.3, min_samples: int = 20):
    """Fit ||u||_{Hdot^s} ~ C (t_star - t)^{-p} on the trailing part of `history`.

    `history` holds (t, hs, ...) tuples.  Returns (C, t_star, p, resid) where
    resid is the RMS of the log-residuals (a relative error in hs).
    """
    arr = np.asarray([(h[0], h[1]) for h in history], dtype=float)
    if len(arr) < min_samples:
        raise FitFailed(f"need at least {min_samples} samples, got {len(arr)}")
    k = max(min_samples, int(math.ceil(tail_fraction * len(arr))))
    t, y = arr[-k:, 0], arr[-k:, 1]
    if np.any(np.diff(y) <= 0):
        raise FitFailed("Hs seminorm is not increasing on the fitted tail")
    logy = np.log(y)
    span = t[-1] - t[0]
    # local log-slope p/(t_star - t) seeds t_star for p = 1/2
    slope = (logy[-1] - logy[-2]) / (t[-1] - t[-2])
    t0 = t[-1] + min(max(0.5 / slope, 1e-6 * span), 10 * span)
    p0 = 0.5
    c0 = logy[-1] + p0 * math.log(t0 - t[-1])

    def res(x):
        logc, ts, p = x
        return logc - p * np.log(ts - t) - logy

    lo = [-np.inf, t[-1] + 1e-12 * max(1.0, abs(t[-1])), 1e-3]
    hi = [np.inf, t[-1] + 100 * span, 20.0]
    x0 = [c0, min(max(t0, lo[1] * (1 + 1e-12) + 1e-12), hi[1]), p0]
    sol = least_squares(res, x0, bounds=(lo, hi), method="trf", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    if not sol.success:
        raise FitFailed(sol.message)
    logc, ts, p = sol.x
    resid = float(np.sqrt(np.mean(sol.fun**2)))
    return float(math.exp(logc)), float(ts), float(p), resid


@dataclass
class RescaledProfile:
    v: Field
    lam: float
    center: np.ndarray
    theta: float
    t: float


@dataclass
class ConcentrationSample:
    t: float
    a: float
    center: np.ndarray
    windowed_mass: float
    admissibility: float
    mollification: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "a": self.a,
            "center": [float(c) for c in np.atleast_1d(self.center)],
            "windowed_mass": self.windowed_mass,
            "admissibility": self.admissibility,
            "mollification": self.mollification,
        }


def lambda_scale(st: SimulationState, gs: GroundState) -> float:
    """(||Q||_{Hdot^s} / ||u(t)||_{Hdot^s})^{1/s}."""
    return lambda_of_field(st.field, gs)


def lambda_of_field(u: Field, gs: GroundState) -> float:
    s = gs.params.s
    hu = sobolev_seminorm(u, s)
    if hu == 0.0:
        raise ValueError("lambda is undefined for a field with zero Hdot^s seminorm")
    return (gs.hs_q / hu) ** (1.0 / s)


def _ball_kernel(g: Grid, a: float) -> np.ndarray:
    # indicator of |x| <= a with a linear ramp one cell wide, origin moved to index 0
    w = np.clip((a - g.radius) / g.spacing + 0.5, 0.0, 1.0)
    return np.fft.ifftshift(w)


def windowed_mass_map(u: Field, a: float) -> np.ndarray:
    """y -> int_{|x-y|<=a} |u|^2 for every node y (periodic FFT convolution)."""
    g = u.grid
    rho = np.abs(u.values) ** 2
    K = _ball_kernel(g, a)
    conv = np.fft.ifftn(np.fft.fftn(rho) * np.conj(np.fft.fftn(K))).real
    return conv * g.cell_volume


def concentration_scan(st: SimulationState, a: float) -> ConcentrationSample:
    return scan_field(st.field, st.params, a, st.t)


def scan_field(u: Field, p: ModelParams, a: float, t: float = 0.0) -> ConcentrationSample:
    g = u.grid
    if not (0.0 < a < g.half_length):
        raise ValueError(f"window radius must lie in (0, {g.half_length}) (got {a})")
    W = windowed_mass_map(u, a)
    idx = np.unravel_index(int(np.argmax(W)), W.shape)  # first maximum: lexicographic ties
    center = np.array([g.axis[i] for i in idx])
    wm = min(float(W[idx]), mass(u))
    hs = sobolev_seminorm(u, p.s)
    return ConcentrationSample(
        t=t,
        a=a,
        center=center,
        windowed_mass=wm,
        admissibility=a * hs ** (1.0 / p.s),
        mollification=g.spacing,
    )


def admissible_window(t: float, t_star: float, s: float, epsilon: float, grid: Grid | None = None) -> float:
    """a(t) = (t_star - t)^{1/(2s) - epsilon}, clipped to [2h, L/2] when a grid is given."""
    if not t < t_star:
        raise ValueError("window needs t < t_star")
    if not (0.0 < epsilon < 1.0 / (2.0 * s)):
        raise ValueError(f"epsilon must lie in (0, {1 / (2 * s):g})")
    a = (t_star - t) ** (1.0 / (2.0 * s) - epsilon)
    if grid is not None:
        a = min(max(a, 2.0 * grid.spacing), grid.half_length / 2.0)
    return a


def rescaled_profile(
    st: SimulationState,
    gs: GroundState,
    fit_phase: bool = True,
    tail_tol: float = 1e-4,
) -> RescaledProfile:
    return profile_of_field(st.field, gs, st.t, fit_phase, tail_tol)


def profile_of_field(u: Field, gs: GroundState, t: float = 0.0, fit_phase: bool = True,
                     tail_tol: float = 1e-4) -> RescaledProfile:
    """v(x) = lam^{d/2} u(lam x + center) on the ground-state grid, optionally phase-aligned to Q."""
    lam = lambda_of_field(u, gs)
    g = u.grid
    frac = tail_fraction(u)
    if frac > tail_tol:
        raise TailMassEscape(frac, tail_tol)
    a = min(max(lam, 2.0 * g.spacing), 0.49 * g.half_length)
    center = scan_field(u, gs.params, a, t).center
    v = rescale(shift(u, center), lam, gs.grid, tail_tol=1.0)
    theta = 0.0
    if fit_phase:
        ip = inner(v, gs.q)
        theta = -math.atan2(ip.imag, ip.real) if abs(ip) > 0 else 0.0
        v = v * np.exp(1j * theta)
    return RescaledProfile(v=v, lam=lam, center=center, theta=theta, t=t)


def _hs_weights(g: Grid, s: float) -> np.ndarray:
    return 1.0 + frac_multiplier(g, s).table


def _corr_derivs(w: np.ndarray, kvecs: list[np.ndarray], y: np.ndarray):
    phase = np.ones_like(w)
    for k, yj in zip(kvecs, y):
        phase = phase * np.exp(1j * k * yj)
    c = np.sum(w * phase)
    dc = np.array([np.sum(1j * k * w * phase) for k in kvecs])
    d2c = np.array([[-np.sum(ki * kj * w * phase) for kj in kvecs] for ki in kvecs])
    return c, dc, d2c


def align_to_ground_state(v: Field, gs: GroundState, newton_iter: int = 30):
    """Translation y and phase theta minimizing ||e^{i theta} v(. + y) - Q||_{H^s}.

    The H^s cross-correlation C(y) = sum (1+|xi|^{2s}) vhat conj(Qhat) e^{i xi y}
    is evaluated at every node by one inverse FFT; the best node is then
    refined off-lattice by Newton's method on |C(y)|^2.
    """
    g = v.grid
    s = gs.params.s
    wts = _hs_weights(g, s)
    w = wts * np.fft.fftn(v.values) * np.conj(np.fft.fftn(gs.q.values))
    corr = np.fft.ifftn(w) * w.size
    # corr[m] = C(m h) with shifts taken periodically
    idx = np.unravel_index(int(np.argmax(np.abs(corr))), corr.shape)
    n = g.n
    y = np.array([((i + n // 2) % n - n // 2) * g.spacing for i in idx], dtype=float)
    kvecs = [k for k in np.meshgrid(*([g.freqs] * g.d), indexing="ij")]
    kvecs = [k.ravel() for k in kvecs]
    wf = w.ravel()
    for _ in range(newton_iter):
        c, dc, d2c = _corr_derivs(wf, kvecs, y)
        grad = 2.0 * np.real(np.conj(c) * dc)
        hess = 2.0 * np.real(np.outer(np.conj(dc), dc) + np.conj(c) * d2c)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > g.spacing:
            break
        y = y - step
        if np.max(np.abs(step)) < 1e-14 * max(1.0, g.half_length):
            break
    c, _, _ = _corr_derivs(wf, kvecs, y)
    theta = -math.atan2(c.imag, c.real)
    return y, theta


def profile_distance(rp: RescaledProfile | Field, gs: GroundState) -> float:
    """||e^{i theta} v(. + y) - Q||_{H^s} minimized over phase and a local translation."""
    v = rp.v if isinstance(rp, RescaledProfile) else rp
    y, theta = align_to_ground_state(v, gs)
    w = shift(v, y) * np.exp(1j * theta)
    return hs_norm(w - gs.q, gs.params.s)
