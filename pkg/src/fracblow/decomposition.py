"""Translation-bubble extraction for bounded sequences of fields.

A discrete rendering of the profile decomposition: members are recentred at
the maximiser of a low-passed copy, the recentred tail is averaged to stand
in for the weak limit, and the bubble is subtracted before the next level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import QRange, WrapCollision
from .ground_state import GroundState
from .spectral import Field, Grid, lp_norm, mass, roll_cells, sobolev_seminorm

# shift sequences must drift apart by this many cells over the tail half
DIVERGENCE_CELLS = 8.0


@dataclass
class FieldSequence:
    members: list[Field]
    label: str = ""

    def __post_init__(self):
        if not self.members:
            raise ValueError("sequence is empty")
        g = self.members[0].grid
        if any(m.grid != g for m in self.members):
            raise ValueError("members must share one grid")

    @property
    def grid(self) -> Grid:
        return self.members[0].grid

    def __len__(self) -> int:
        return len(self.members)

    def tail_indices(self) -> range:
        n = len(self.members)
        return range(n // 2, n)

    def bound(self, s: float) -> float:
        return max(mass(m) + sobolev_seminorm(m, s) ** 2 for m in self.members)


@dataclass
class Bubble:
    profile: Field
    shifts: np.ndarray  # (members, d) physical positions
    cells: np.ndarray  # (members, d) integer lattice offsets from the origin node


@dataclass
class BubbleDecomposition:
    bubbles: list[Bubble]
    remainders: list[Field]
    eta_history: list[float]
    s: float
    R: float
    eta_floor: float
    stop_reason: str = ""
    identity_report: dict = dc_field(default_factory=dict)

    def masses(self) -> list[float]:
        return [mass(b.profile) for b in self.bubbles]


def critical_sobolev_exponent(d: int, s: float) -> float:
    if d == 1:
        return 2.0 / (1.0 - 2.0 * s) if s < 0.5 else math.inf
    if d - 2 * s <= 0:
        return math.inf
    return 2.0 * d / (d - 2.0 * s)


def _check_q(d: int, s: float, q: float) -> None:
    top = critical_sobolev_exponent(d, s)
    if not (2.0 < q < top):
        raise QRange(f"q={q} outside (2, {top})")


def lowpass(f: Field, R: float) -> np.ndarray:
    """chi_R * f with a sharp Fourier cutoff |xi| <= R."""
    mask = f.grid.ksq <= R * R
    return np.fft.ifftn(np.fft.fftn(f.values) * mask)


def _argmax_cells(f: Field, R: float) -> np.ndarray:
    a = np.abs(lowpass(f, R))
    idx = np.unravel_index(int(np.argmax(a)), a.shape)
    return np.array(idx) - f.grid.n // 2


def _place(profile: Field, cells) -> Field:
    """profile(x - cells*h)."""
    return roll_cells(profile, -np.asarray(cells))


def _eta(f: Field, s: float) -> float:
    return mass(f) + sobolev_seminorm(f, s) ** 2


def extract_bubbles(
    seq: FieldSequence,
    l_max: int,
    R: float = 2.0,
    eta_floor: float | None = None,
    q: float = 4.0,
    s: float = 0.5,
    rcond: float = 1e-10,
    refine_rounds: int = 3,
) -> BubbleDecomposition:
    """Greedy bubble extraction with a joint refit after every level.

    Each level recentres the current remainders at the argmax of their
    low-passed modulus and averages the tail.  All profiles found so far are
    then refit together against the tail members with the shifts held fixed,
    alternating with matched-filter relocation of each bubble.
    """
    if l_max < 1:
        raise ValueError("l_max must be at least 1")
    g = seq.grid
    _check_q(g.d, s, q)
    if eta_floor is None:
        eta_floor = 1e-4 * _eta(seq.members[0], s)
    tail = list(seq.tail_indices())
    rem = list(seq.members)
    bubbles: list[Bubble] = []
    etas: list[float] = []
    reason = f"reached l_max={l_max}"
    for _ in range(l_max):
        cells = np.array([_argmax_cells(r, R) for r in rem])
        V = _tail_average(rem, cells, tail)
        eta = _eta(V, s)
        etas.append(eta)
        if eta < eta_floor:
            reason = "eta below floor"
            break
        if not _separates(cells, bubbles, tail, g, 2.0 * math.pi / R):
            # bounded relative shifts belong to an existing bubble's orbit
            reason = "shifts do not separate from an existing bubble"
            break
        bubbles.append(Bubble(V, cells * g.spacing, cells))
        _backfit(seq, bubbles, tail, rcond)
        for _ in range(refine_rounds if len(bubbles) > 1 else 0):
            if not _relocate(seq, bubbles):
                break
            _backfit(seq, bubbles, tail, rcond)
        rem = _remainders(seq, bubbles)
    remainders = _remainders(seq, bubbles)
    return BubbleDecomposition(
        bubbles=bubbles,
        remainders=remainders,
        eta_history=etas,
        s=s,
        R=R,
        eta_floor=eta_floor,
        stop_reason=reason,
    )


def _separates(cells: np.ndarray, bubbles: list[Bubble], tail: list[int], g: Grid, min_dist: float,
               min_growth: float = DIVERGENCE_CELLS) -> bool:
    """True when the candidate drifts away from every bubble over the tail.

    The separation (in cells) must grow by `min_growth` along its least-squares
    trend across the tail and end at least `min_dist` away in physical units.
    """
    n = g.n
    idx = np.asarray(tail, dtype=float)
    for b in bubbles:
        diff = (cells - b.cells + n // 2) % n - n // 2
        sep = np.linalg.norm(diff, axis=1)[tail]
        growth = np.polyfit(idx, sep, 1)[0] * (idx[-1] - idx[0]) if len(tail) > 1 else 0.0
        if growth < min_growth or sep[-1] * g.spacing < min_dist:
            return False
    return True


def _remainders(seq: FieldSequence, bubbles: list[Bubble]) -> list[Field]:
    out = []
    for i, v in enumerate(seq.members):
        w = v
        for b in bubbles:
            w = w - _place(b.profile, b.cells[i])
        out.append(w)
    return out


def _backfit(seq: FieldSequence, bubbles: list[Bubble], tail: list[int], rcond: float) -> None:
    """Jointly refit all profiles to the tail members, one Fourier mode at a time.

    With the shifts fixed, vhat_n(xi) = sum_j Vhat_j(xi) exp(-i xi . x_n^j) is a
    small linear system per mode; modes where it is rank deficient get the
    minimum-norm split.
    """
    if len(bubbles) < 2:
        return
    g = seq.grid
    k = [kk.ravel() for kk in np.meshgrid(*([g.freqs] * g.d), indexing="ij")]
    vh = np.stack([np.fft.fftn(seq.members[i].values).ravel() for i in tail], axis=1)  # modes x T
    A = np.empty((vh.shape[0], len(tail), len(bubbles)), dtype=np.complex128)
    for j, bub in enumerate(bubbles):
        pos = bub.cells[tail] * g.spacing  # T x d
        phase = sum(np.outer(k[a], pos[:, a]) for a in range(g.d))
        A[:, :, j] = np.exp(-1j * phase)
    sol = np.linalg.pinv(A, rcond=rcond) @ vh[:, :, None]
    for j, bub in enumerate(bubbles):
        vals = np.fft.ifftn(sol[:, j, 0].reshape(g.shape))
        bubbles[j] = Bubble(Field(g, vals), bub.shifts, bub.cells)
    _gauge_means(bubbles)


def _relocate(seq: FieldSequence, bubbles: list[Bubble]) -> bool:
    """Move each bubble to the peak of its cross-correlation with the member
    minus the other bubbles.  Returns True if any shift changed."""
    g = seq.grid
    half = g.n // 2
    moved = False
    for j, b in enumerate(bubbles):
        ph = np.conj(np.fft.fftn(b.profile.values))
        cells = b.cells.copy()
        for i, v in enumerate(seq.members):
            w = v
            for k, other in enumerate(bubbles):
                if k != j:
                    w = w - _place(other.profile, other.cells[i])
            corr = np.abs(np.fft.ifftn(np.fft.fftn(w.values) * ph))
            idx = np.array(np.unravel_index(int(np.argmax(corr)), corr.shape))
            cells[i] = (idx + half) % g.n - half
        if np.any(cells != b.cells):
            moved = True
            bubbles[j] = Bubble(b.profile, cells * g.spacing, cells)
    return moved


def _gauge_means(bubbles: list[Bubble]) -> None:
    """Fix the split of the zero Fourier mode, which the data cannot identify.

    Only the sum of the bubbles' means is determined; the constants are chosen
    to minimize the total mass outside |x| > L/2 with that sum held fixed.
    """
    g = bubbles[0].profile.grid
    outer = np.max(np.abs(np.stack(g.coords)), axis=0) > 0.5 * g.half_length
    m = np.array([b.profile.values[outer].mean() for b in bubbles])
    c = m.mean() - m
    for j, b in enumerate(bubbles):
        bubbles[j] = Bubble(b.profile.with_values(b.profile.values + c[j]), b.shifts, b.cells)


def _tail_average(fields: list[Field], cells: np.ndarray, tail: list[int]) -> Field:
    acc = np.zeros(fields[0].grid.shape, dtype=np.complex128)
    for i in tail:
        acc += roll_cells(fields[i], cells[i]).values
    return Field(fields[0].grid, acc / len(tail))


def level_remainders(dec: BubbleDecomposition, seq: FieldSequence, level: int) -> list[Field]:
    out = []
    for i, v in enumerate(seq.members):
        w = v
        for b in dec.bubbles[:level]:
            w = w - _place(b.profile, b.cells[i])
        out.append(w)
    return out


def check_orthogonality(dec: BubbleDecomposition, seq: FieldSequence, q: float = 4.0, tol: float = 1e-6) -> dict:
    """Per-level Pythagorean gaps in L2 and Hdot^s plus the remainder L^q norms on the tail."""
    g = seq.grid
    s = dec.s
    _check_q(g.d, s, q)
    tail = list(seq.tail_indices())
    levels = []
    for lev in range(1, len(dec.bubbles) + 1):
        rems = level_remainders(dec, seq, lev)
        sum_m = sum(mass(b.profile) for b in dec.bubbles[:lev])
        sum_h = sum(sobolev_seminorm(b.profile, s) ** 2 for b in dec.bubbles[:lev])
        gl2, ghs = [], []
        for i in tail:
            vm = mass(seq.members[i])
            vh = sobolev_seminorm(seq.members[i], s) ** 2
            gl2.append(abs(vm - sum_m - mass(rems[i])) / vm)
            ghs.append(abs(vh - sum_h - sobolev_seminorm(rems[i], s) ** 2) / vh)
        levels.append({
            "level": lev,
            "gap_l2": max(gl2),
            "gap_hs": max(ghs),
            "gap_l2_last": gl2[-1],
            "gap_hs_last": ghs[-1],
            "remainder_lq": max(lp_norm(rems[i], q) for i in tail),
        })
    rq = [lv["remainder_lq"] for lv in levels]
    decreasing = all(b < a for a, b in zip(rq, rq[1:]))
    gaps_ok = all(lv["gap_l2"] < tol and lv["gap_hs"] < tol for lv in levels)
    report = {"q": q, "tol": tol, "levels": levels, "remainder_decreasing": decreasing,
              "passed": bool(gaps_ok and decreasing)}
    dec.identity_report = report
    return report


def compactness_lower_bound(
    seq: FieldSequence,
    gs: GroundState,
    q_exact: bool = False,
    tol: float = 1e-4,
    l_max: int = 4,
    R: float = 2.0,
    vacuous_below: float = 1e-3,
) -> dict:
    """Check ||V||_2^{4s/d} >= d/(d+2s) m^{a+2}/M^2 ||Q||_2^{4s/d} for the heaviest bubble V.

    M and m are the tail maxima of ||v_n||_{Hdot^s} and ||v_n||_{L^{a+2}}.  With
    q_exact the values attained by rescaled blow-up profiles are used instead:
    m^{a+2} = (d+2s)/d ||Q||_{Hdot^s}^2 and M^2 = ||Q||_{Hdot^s}^2.
    """
    p = gs.params
    if not p.mass_critical():
        raise ValueError("compactness bound needs mass-critical parameters")
    d, s, a = p.d, p.s, p.alpha
    tail = list(seq.tail_indices())
    if q_exact:
        hq2 = gs.hs_q**2
        m_pow = (d + 2 * s) / d * hq2
        M2 = hq2
    else:
        M2 = max(sobolev_seminorm(seq.members[i], s) for i in tail) ** 2
        m_pow = max(lp_norm(seq.members[i], a + 2) for i in tail) ** (a + 2)
    qpow = gs.mass_q ** (2 * s / d)
    rhs = d / (d + 2 * s) * m_pow / M2 * qpow if M2 > 0 else 0.0
    dec = extract_bubbles(seq, l_max, R=R, s=s, q=_safe_q(d, s))
    if dec.bubbles:
        V = max((b.profile for b in dec.bubbles), key=mass)
        mv = mass(V)
    else:
        mv = 0.0
    lhs = mv ** (2 * s / d)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "ratio": lhs / rhs if rhs > 0 else math.inf,
        "holds": lhs >= rhs * (1 - tol),
        "vacuous": rhs < vacuous_below * qpow,
        "bubble_mass": mv,
        "mass_q": gs.mass_q,
        "m_pow": m_pow,
        "M2": M2,
        "tol": tol,
    }


def _safe_q(d: int, s: float) -> float:
    top = critical_sobolev_exponent(d, s)
    return 4.0 if top > 4.0 else 0.5 * (2.0 + top)


def synth_sequence(
    profiles: list[Field],
    rates,
    count: int,
    R: float = 1.0,
    start: int = 1,
    label: str = "synthetic",
) -> FieldSequence:
    """v_n = sum_j profiles[j](. - n*rate_j*h) for n = start..start+count-1, rates in lattice cells."""
    if not profiles:
        raise ValueError("need at least one profile")
    g = profiles[0].grid
    rates = np.asarray(rates, dtype=int).reshape(len(profiles), -1)
    rates = np.broadcast_to(rates, (len(profiles), g.d)) if rates.shape[1] == 1 else rates
    ns = list(range(start, start + count))
    tail = ns[count // 2:]
    L = g.half_length
    for n in tail:
        pos = [n * r * g.spacing for r in rates]
        for j, pj in enumerate(pos):
            if np.max(np.abs(pj)) > L - 4 * R:
                raise WrapCollision(f"bubble {j} at member {n} is within 4R of the box wrap")
            for k in range(j):
                diff = np.abs(pj - pos[k])
                diff = np.minimum(diff, 2 * L - diff)
                if np.linalg.norm(diff) < 4 * R and np.any(rates[j] != rates[k]):
                    raise WrapCollision(f"bubbles {k} and {j} closer than 4R at member {n}")
    members = []
    for n in ns:
        acc = np.zeros(g.shape, dtype=np.complex128)
        for prof, r in zip(profiles, rates):
            acc += _place(prof, n * r).values
        members.append(Field(g, acc))
    return FieldSequence(members, label)
