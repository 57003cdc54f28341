"""Periodic Fourier discretization of the fractional Laplacian and related functionals.

The physical domain is the box [-L, L)^d with n nodes per axis.  Fourier
coefficients are normalized so that they approximate the unitary continuous
transform, which gives Parseval with weight (pi/L)^d per lattice mode:

    mass(f) = h^d sum |f_j|^2 = (pi/L)^d sum |fhat_k|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache

import numpy as np

from .errors import GridError, ParamError, TailMassEscape

CRITICAL_TOL = 1e-12
_INTERP_BLOCK = 1 << 22  # entries per interpolation block
_HORNER_MIN_N = 4096


@dataclass(frozen=True)
class ModelParams:
    """PDE instance i u_t - (-Delta)^s u = mu |u|^alpha u in dimension d."""

    d: int
    s: float
    alpha: float
    mu: int = -1

    def __post_init__(self):
        problems = []
        if self.d not in (1, 2, 3):
            problems.append(f"d must be 1, 2 or 3 (got {self.d})")
        if not (0.0 < self.s <= 1.0):
            problems.append(f"s must lie in (0, 1] (got {self.s})")
        if not self.alpha > 0.0:
            problems.append(f"alpha must be positive (got {self.alpha})")
        if self.mu not in (-1, 1):
            problems.append(f"mu must be -1 or +1 (got {self.mu})")
        if problems:
            raise ParamError("; ".join(problems))

    @classmethod
    def critical(cls, d: int, s: float, mu: int = -1) -> "ModelParams":
        return cls(d=d, s=s, alpha=4.0 * s / d, mu=mu)

    def mass_critical(self) -> bool:
        return abs(self.alpha - 4.0 * self.s / self.d) < CRITICAL_TOL

    def s_c(self) -> float:
        return self.d / 2.0 - 2.0 * self.s / self.alpha

    def hypothesis_stamp(self, radial: bool = False) -> str:
        """'inside' when (d, s, alpha, radiality) lies in the range where concentration is known to hold."""
        d, s = self.d, self.s
        ok = False
        if self.mass_critical() and self.mu == -1:
            if d == 1:
                ok = 1 / 3 < s < 1 and s != 0.5
            elif d == 2:
                ok = 0.5 < s < 1
            elif d == 3:
                ok = (0.6 <= s <= 0.75 and radial) or 0.75 < s < 1
        return "inside" if ok else "outside"


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    half_length: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3 (got {self.d})")
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or not _is_pow2(int(self.n)):
            raise GridError(f"n must be a power of two >= 8 (got {self.n})")
        if not self.half_length > 0:
            raise GridError(f"half_length must be positive (got {self.half_length})")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def mode_weight(self) -> float:
        """Parseval weight (pi/L)^d carried by each lattice mode."""
        return (math.pi / self.half_length) ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_length + self.spacing * np.arange(self.n)

    @cached_property
    def freqs(self) -> np.ndarray:
        # symmetric integer range 0..n/2-1, -n/2..-1 scaled by pi/L
        return np.fft.fftfreq(self.n, d=1.0 / self.n) * (math.pi / self.half_length)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.d), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords))

    @cached_property
    def ksq(self) -> np.ndarray:
        ks = np.meshgrid(*([self.freqs] * self.d), indexing="ij")
        return sum(k**2 for k in ks)

    @property
    def kmax(self) -> float:
        return math.pi / self.spacing

    def meta(self) -> dict:
        return {"d": self.d, "n": int(self.n), "half_length": float(self.half_length)}


def make_grid(d: int, n: int, half_length: float) -> Grid:
    return Grid(d=int(d), n=int(n), half_length=float(half_length))


@dataclass(frozen=True, eq=False)
class Field:
    """Complex samples on a Grid.  The value array is read-only."""

    grid: Grid
    values: np.ndarray
    diverged: bool = dc_field(default=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.complex128, copy=True)
        if vals.size != self.grid.n**self.grid.d:
            raise GridError(
                f"field has {vals.size} samples, grid needs {self.grid.n ** self.grid.d}"
            )
        vals = vals.reshape(self.grid.shape)
        if not self.diverged and not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        return cls(grid, fn(*grid.coords))

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def conj(self) -> "Field":
        return Field(self.grid, np.conj(self.values))

    def is_real(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.values.imag), initial=0.0) <= tol)


def _check_same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridError("fields live on different grids")


@dataclass(frozen=True, eq=False)
class FracMultiplier:
    s: float
    table: np.ndarray


@lru_cache(maxsize=64)
def frac_multiplier(grid: Grid, s: float) -> FracMultiplier:
    """Cached table |xi|^{2s}, with the zero mode set to 0 for every s."""
    table = np.power(grid.ksq, s)
    table.flat[0] = 0.0
    table.setflags(write=False)
    return FracMultiplier(s=float(s), table=table)


def fourier_coeffs(f: Field) -> np.ndarray:
    g = f.grid
    return np.fft.fftn(f.values) * (g.cell_volume / (2.0 * math.pi) ** (g.d / 2.0))


def from_fourier_coeffs(grid: Grid, coeffs: np.ndarray) -> Field:
    return Field(grid, np.fft.ifftn(coeffs) / (grid.cell_volume / (2.0 * math.pi) ** (grid.d / 2.0)))


def apply_multiplier(f: Field, table: np.ndarray) -> Field:
    return Field(f.grid, np.fft.ifftn(table * np.fft.fftn(f.values)))


def frac_laplacian(f: Field, s: float) -> Field:
    if not (0.0 < s <= 1.0):
        raise ParamError(f"s must lie in (0, 1] (got {s})")
    return apply_multiplier(f, frac_multiplier(f.grid, s).table)


def inner(f: Field, g: Field) -> complex:
    """L2 inner product <f, g> = int f conj(g)."""
    _check_same_grid(f, g)
    return complex(np.vdot(g.values, f.values) * f.grid.cell_volume)


def mass(f: Field) -> float:
    return float(np.sum(np.abs(f.values) ** 2) * f.grid.cell_volume)


def spectral_mass(f: Field) -> float:
    return float(np.sum(np.abs(fourier_coeffs(f)) ** 2) * f.grid.mode_weight)


def _weighted_spectrum(f: Field, sigma: float) -> float:
    g = f.grid
    fh = np.fft.fftn(f.values)
    w = np.abs(fh) ** 2
    if sigma != 0:
        w = w * frac_multiplier(g, sigma).table
    # |fft|^2 h^d / n^d equals (pi/L)^d |fhat|^2
    return float(np.sum(w) * g.cell_volume / g.n**g.d)


def sobolev_seminorm(f: Field, sigma: float) -> float:
    if not (0.0 <= sigma <= 2.0):
        raise ParamError(f"sigma must lie in [0, 2] (got {sigma})")
    return math.sqrt(_weighted_spectrum(f, sigma))


def hs_norm(f: Field, s: float) -> float:
    """Inhomogeneous H^s norm (||f||_{L2}^2 + ||f||_{Hdot^s}^2)^{1/2}."""
    return math.sqrt(mass(f) + _weighted_spectrum(f, s))


def lp_norm(f: Field, p: float) -> float:
    a = np.abs(f.values)
    if math.isinf(p):
        return float(np.max(a))
    if p < 1:
        raise ParamError(f"p must be >= 1 (got {p})")
    return float((np.sum(a**p) * f.grid.cell_volume) ** (1.0 / p))


def energy(f: Field, p: ModelParams) -> float:
    kinetic = 0.5 * _weighted_spectrum(f, p.s)
    potential = p.mu / (p.alpha + 2.0) * float(
        np.sum(np.abs(f.values) ** (p.alpha + 2.0)) * f.grid.cell_volume
    )
    return kinetic + potential


def gn_ratio(f: Field, p: ModelParams) -> float:
    """Weinstein quotient ||f||_{a+2}^{a+2} / (||f||_{Hdot^s}^2 ||f||_{L2}^a) at a = 4s/d."""
    if not p.mass_critical():
        raise ParamError("gn_ratio needs mass-critical parameters")
    m = mass(f)
    if m == 0.0:
        raise ValueError("gn_ratio of the zero field is undefined")
    a = p.alpha
    num = float(np.sum(np.abs(f.values) ** (a + 2.0)) * f.grid.cell_volume)
    kin = _weighted_spectrum(f, p.s)
    return num / (kin * m ** (a / 2.0))


def shift(f: Field, x0) -> Field:
    """g(x) = f(x + x0) by an exact Fourier phase shift (periodic wrap)."""
    g = f.grid
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (g.d,))
    if not np.any(x0):
        return f
    phase = np.ones(g.shape, dtype=np.complex128)
    for ax in range(g.d):
        p1 = np.exp(1j * g.freqs * x0[ax])
        bshape = [1] * g.d
        bshape[ax] = g.n
        phase = phase * p1.reshape(bshape)
    return Field(g, np.fft.ifftn(np.fft.fftn(f.values) * phase))


def roll_cells(f: Field, cells) -> Field:
    """g(x) = f(x + cells*h) as an index roll (exact lattice shift)."""
    cells = np.broadcast_to(np.asarray(cells, dtype=int), (f.grid.d,))
    return Field(f.grid, np.roll(f.values, tuple(-cells), axis=tuple(range(f.grid.d))))


def tail_fraction(f: Field, shell: float = 0.1) -> float:
    """Fraction of mass in the outer `shell` of the box (sup-norm distance from the centre)."""
    g = f.grid
    dens = np.abs(f.values) ** 2
    total = dens.sum()
    if total == 0:
        return 0.0
    far = np.zeros(g.shape, dtype=bool)
    for c in g.coords:
        far |= np.abs(c) > (1.0 - shell) * g.half_length
    return float(dens[far].sum() / total)


def _interp_matrix(src: Grid, pts: np.ndarray) -> np.ndarray:
    """Rows evaluate the band-limited Fourier series (from fft coefficients) at pts."""
    n = src.n
    k = src.freqs
    E = np.exp(1j * np.outer(pts + src.half_length, k)) / n
    # split the Nyquist mode evenly so real data interpolates to real values
    nyq = n // 2
    E[:, nyq] = np.cos(k[nyq] * (pts + src.half_length)) / n
    outside = (pts < -src.half_length) | (pts >= src.half_length)
    E[outside, :] = 0.0
    return E


def resample(f: Field, target: Grid, scale: float = 1.0, offset=None) -> np.ndarray:
    """Samples of the interpolant of f at scale*x + offset for x on the target nodes."""
    src = f.grid
    offset = np.zeros(src.d) if offset is None else np.broadcast_to(np.asarray(offset, float), (src.d,))
    out = f.values
    for ax in range(src.d):
        pts = scale * target.axis + offset[ax]
        coeffs = np.fft.fft(out, axis=ax)
        if src.n > _HORNER_MIN_N:
            out = np.moveaxis(_horner_eval(src, pts, np.moveaxis(coeffs, ax, 0)), 0, ax)
            continue
        # blocks of target points keep the interpolation matrix small
        step = max(1, _INTERP_BLOCK // src.n)
        parts = [
            np.tensordot(_interp_matrix(src, pts[i:i + step]), coeffs, axes=([1], [ax]))
            for i in range(0, len(pts), step)
        ]
        out = np.moveaxis(np.concatenate(parts, axis=0), 0, ax)
    return out


def _horner_eval(src: Grid, pts: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Same values as _interp_matrix(src, pts) @ coeffs without forming the matrix.

    The series is a polynomial in z = exp(i pi (x + L) / L); Horner's rule costs
    O(n) passes over the target points instead of an n-by-m exponential table.
    """
    n = src.n
    L = src.half_length
    theta = np.pi * (pts + L) / L
    z = np.exp(1j * theta).reshape((-1,) + (1,) * (coeffs.ndim - 1))
    ordered = np.fft.fftshift(coeffs, axes=0)  # row j holds mode j - n/2
    acc = np.zeros((len(pts),) + coeffs.shape[1:], dtype=np.complex128)
    for row in ordered[::-1]:
        acc = acc * z + row
    acc = acc * z ** (-(n // 2))
    # Nyquist mode enters as a cosine, matching _interp_matrix
    nyq = coeffs[n // 2]
    zc = z.reshape(-1)
    corr = np.cos(theta * (n // 2)) - zc ** (-(n // 2))
    acc = acc + corr.reshape(z.shape) * nyq
    outside = (pts < -L) | (pts >= L)
    acc[outside] = 0.0
    return acc / n


def rescale(f: Field, lam: float, target: Grid | None = None, tail_tol: float = 1e-4) -> Field:
    """g(x) = lam^{d/2} f(lam x) on `target`, via band-limited interpolation.

    Points lam*x falling outside the source box are set to zero.
    """
    if not lam > 0:
        raise ParamError(f"scale must be positive (got {lam})")
    target = f.grid if target is None else target
    if target.d != f.grid.d:
        raise GridError("target grid has a different dimension")
    frac = tail_fraction(f)
    if frac > tail_tol:
        raise TailMassEscape(frac, tail_tol)
    if lam == 1.0 and target == f.grid:
        return f
    vals = resample(f, target, scale=lam)
    return Field(target, lam ** (f.grid.d / 2.0) * vals)
