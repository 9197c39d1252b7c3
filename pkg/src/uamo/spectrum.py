"""Band structures on the unit circle for rational frequencies, gaps, labels, butterflies.

At ``Phi = p/q`` the spectrum at a fixed phase is ``{zeta : |tr M(zeta, theta)| <= 2}``
where ``M`` is the q-fold product of two-step maps.  Writing ``tr M = P / N`` with
``P`` the trace of the product of the unnormalized bracket matrices and
``N(theta) = prod_j lambda1 rho_j(theta)``, the phase dependence of ``P`` sits entirely
in a ``zeta``-independent term ``g(theta)``:

    P(zeta, theta) = F(zeta) + g(theta).

The union over all phases is therefore exactly ``{zeta : lo <= F(zeta) <= hi}`` with
``lo = min(-2N - g)`` and ``hi = max(2N - g)`` over one phase period.  Its upper edges
are the band edges of the single phase attaining ``hi`` (where the trace is ``+2``), its
lower edges those of the phase attaining ``lo`` (trace ``-2``).  Both are computed as
eigenvalues of the walk on twisted Bloch waves, which stays accurate where the trace
varies over many orders of magnitude.  The phase structure itself is re-checked in
extended precision on every call.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import mpmath
import numpy as np
from scipy.optimize import minimize_scalar

from . import arithmetic
from .cocycle import CocycleSpec, Family, rotation_numbers, _two_step_entries
from .model import TWO_PI, Couplings, Frequency, StructuralMismatchError, walk_bloch

MERGE_TOL = 1e-9
WIDTH_FLOOR = 1e-9
LABEL_RESIDUAL_TOL = 1e-3
MP_DPS = 40


class BandCountWarning(UserWarning):
    """The merged band count differs from ``2q`` after grid refinement."""


# -- arcs on the circle ----------------------------------------------------------


@dataclass(frozen=True)
class Arc:
    """Closed arc ``{e^{i zeta} : lo <= zeta <= hi}`` with ``lo`` in ``[0, 2 pi)``.

    ``lo == hi`` is allowed: a band narrower than the angular resolution of a double.
    """

    lo: float
    hi: float

    def __post_init__(self):
        if not 0.0 <= self.lo < TWO_PI:
            raise ValueError(f"arc start {self.lo!r} outside [0, 2pi)")
        if not self.lo <= self.hi <= self.lo + TWO_PI + 1e-12:
            raise ValueError(f"invalid arc [{self.lo!r}, {self.hi!r}]")

    @classmethod
    def between(cls, a: float, b: float) -> "Arc":
        """Arc running counterclockwise from angle ``a`` to angle ``b``."""
        length = (b - a) % TWO_PI
        if length == 0.0:
            length = TWO_PI if b != a else 0.0
        lo = a % TWO_PI
        if lo >= TWO_PI:
            lo = 0.0
        return cls(lo, lo + length)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return (0.5 * (self.lo + self.hi)) % TWO_PI

    def is_full(self) -> bool:
        return self.length >= TWO_PI - 1e-12

    def contains(self, zeta: float) -> bool:
        return self.is_full() or (zeta - self.lo) % TWO_PI <= self.length

    def mapped(self, sign: int, shift: float) -> "Arc":
        """Image under ``zeta -> sign * zeta + shift``."""
        if self.is_full():
            return self
        if sign > 0:
            return Arc.between(self.lo + shift, self.hi + shift)
        return Arc.between(-self.hi + shift, -self.lo + shift)


def merge_arcs(arcs, tol: float = MERGE_TOL) -> list:
    """Union of arcs, joining pieces separated by less than ``tol``; sorted by start."""
    arcs = list(arcs)
    if not arcs:
        return []
    if any(a.is_full() for a in arcs):
        return [Arc(0.0, TWO_PI)]
    # cut the circle at a point not covered, if any, then merge linearly
    ivs = sorted((a.lo, a.hi) for a in arcs)
    merged = []
    for lo, hi in ivs:
        if merged and lo <= merged[-1][1] + tol:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    # arcs may wrap past 2 pi and overlap the first ones
    changed = True
    while changed and len(merged) > 1:
        changed = False
        last = merged[-1]
        first = merged[0]
        if last[1] - TWO_PI >= first[0] - tol:
            last[1] = max(last[1], first[1] + TWO_PI)
            merged.pop(0)
            changed = True
    if len(merged) == 1 and merged[0][1] - merged[0][0] >= TWO_PI - tol:
        return [Arc(0.0, TWO_PI)]
    out = []
    for lo, hi in merged:
        lo_w = lo % TWO_PI
        out.append(Arc(lo_w, lo_w + (hi - lo)))
    return sorted(out, key=lambda a: a.lo)


def complement_arcs(arcs) -> list:
    """Open complementary arcs of a disjoint sorted arc list."""
    if not arcs:
        return [Arc(0.0, TWO_PI)]
    if len(arcs) == 1 and arcs[0].is_full():
        return []
    out = []
    for i, a in enumerate(arcs):
        b = arcs[(i + 1) % len(arcs)]
        start = a.hi
        stop = b.lo if i + 1 < len(arcs) else b.lo + TWO_PI
        if stop > start:
            out.append(Arc.between(start, stop))
    return sorted(out, key=lambda a: a.lo)


def circle_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % TWO_PI
    return np.minimum(d, TWO_PI - d)


def distance_to_arcs(zeta: float, arcs) -> float:
    if not arcs:
        return math.inf
    if any(a.contains(zeta) for a in arcs):
        return 0.0
    ends = [e for a in arcs for e in (a.lo, a.hi)]
    return float(np.min(circle_distance(zeta, np.array(ends))))


def _one_sided(a_arcs, b_arcs) -> float:
    points = [e for a in a_arcs for e in (a.lo, a.hi % TWO_PI)]
    for g in complement_arcs(b_arcs):
        if any(a.contains(g.mid) for a in a_arcs):
            points.append(g.mid)
    return max((distance_to_arcs(x, b_arcs) for x in points), default=0.0)


def hausdorff_distance(a_arcs, b_arcs) -> float:
    """Hausdorff distance between two finite unions of closed arcs (arc-length metric)."""
    a_arcs, b_arcs = list(a_arcs), list(b_arcs)
    if not a_arcs and not b_arcs:
        return 0.0
    if not a_arcs or not b_arcs:
        return math.inf
    return max(_one_sided(a_arcs, b_arcs), _one_sided(b_arcs, a_arcs))


# -- records ---------------------------------------------------------------------


@dataclass(frozen=True)
class BandStructure:
    arcs: tuple
    freq: Frequency
    couplings: Couplings
    theta_grid: int
    zeta_resolution: int = 0
    thresholds: tuple = (math.nan, math.nan)
    extremal_phases: tuple = (math.nan, math.nan)  # (theta_lo, theta_hi)
    touching: tuple = ()
    note: str = ""
    convergent: Optional[tuple] = None

    @property
    def count(self) -> int:
        return len(self.arcs)

    @property
    def measure(self) -> float:
        return float(sum(a.length for a in self.arcs))

    @property
    def closed_gaps(self) -> int:
        """Number of points where neighbouring bands touch."""
        return len(self.touching)

    @property
    def expected_count(self) -> int:
        return 2 * self.freq.q if self.freq.is_rational else -1


@dataclass(frozen=True)
class GapRecord:
    arc: Arc
    width: float
    label: Optional[int] = None
    ids: Optional[float] = None
    residual: Optional[float] = None
    offset: Optional[int] = None  # integer m with 2 ids = label * Phi + m
    flagged: bool = False

    def as_dict(self) -> dict:
        return {"zeta_lo": self.arc.lo, "zeta_hi": self.arc.hi, "width": self.width,
                "label": self.label, "ids": self.ids, "residual": self.residual,
                "offset": self.offset, "flagged": self.flagged}


# -- monodromy traces ------------------------------------------------------------


def _require_rational(freq: Frequency) -> tuple[int, int]:
    if not isinstance(freq, Frequency) or not freq.is_rational:
        raise ValueError("a rational frequency p/q is required")
    return freq.p, freq.q


def _orbit_offsets(p: int, q: int) -> np.ndarray:
    return ((np.arange(q) * p) % q) / q


def monodromy_traces(couplings: Couplings, freq: Frequency, theta: float, zetas) -> np.ndarray:
    """Traces of the q-fold two-step product at phase ``theta`` for each angle in ``zetas``."""
    p, q = _require_rational(freq)
    l1, l2 = couplings.lambda1, couplings.lambda2
    if l1 == 0.0:
        raise ValueError("lambda1 = 0: two-step map undefined")
    zs = np.exp(1j * np.atleast_1d(np.asarray(zetas, dtype=float)))
    phases = theta + _orbit_offsets(p, q)
    if np.any(1.0 - (l2 * np.sin(TWO_PI * phases)) ** 2 <= 0.0):
        raise ValueError("singular step on the orbit (vanishing denominator)")
    a, b, c, d = (np.ones_like(zs), np.zeros_like(zs), np.zeros_like(zs), np.ones_like(zs))
    for ph in phases:
        m11, m12, m21, m22 = _two_step_entries(l1, l2, zs, ph)
        a, b, c, d = m11 * a + m12 * c, m11 * b + m12 * d, m21 * a + m22 * c, m21 * b + m22 * d
    tr = a + d
    return tr.real


def monodromy_trace(couplings: Couplings, p_over_q: Frequency, theta: float, zeta: float) -> float:
    return float(monodromy_traces(couplings, p_over_q, theta, [zeta])[0])


class _TraceModel:
    """Scaled bracket traces ``P(zeta, theta) / N0`` for one ``(couplings, p/q)``.

    Step ``j`` is divided by ``lambda1 * rho_j(theta_ref)``, so at ``theta = theta_ref``
    the result is the monodromy trace itself.
    """

    def __init__(self, couplings: Couplings, p: int, q: int, theta_ref: float):
        self.l1, self.l2 = couplings.lambda1, couplings.lambda2
        self.l1p = couplings.lambda1p
        self.q = q
        self.offsets = _orbit_offsets(p, q)
        s_ref = np.sin(TWO_PI * (theta_ref + self.offsets))
        self.ref_r = np.sqrt(1.0 - (self.l2 * s_ref) ** 2)
        if np.any(self.ref_r == 0.0):
            raise ValueError("singular step on the reference orbit")
        self.step_scale = 1.0 / (self.l1 * self.ref_r)

    def bracket_trace(self, thetas, zetas) -> np.ndarray:
        """Traces of shape ``(len(thetas), len(zetas))``."""
        th = np.atleast_1d(np.asarray(thetas, dtype=float))[:, None]
        z = np.exp(1j * np.atleast_1d(np.asarray(zetas, dtype=float)))[None, :]
        zi = 1.0 / z
        l1p, l2 = self.l1p, self.l2
        shape = (th.shape[0], z.shape[1])
        a = np.ones(shape, complex)
        b = np.zeros(shape, complex)
        c = np.zeros(shape, complex)
        d = np.ones(shape, complex)
        for off, sc in zip(self.offsets, self.step_scale):
            s = l2 * np.sin(TWO_PI * (th + off))
            k11 = (z + l1p * s) * sc
            k12 = (-l1p * zi - s) * sc
            k21 = (-l1p * z - s) * sc
            k22 = (zi + l1p * s) * sc
            a, b, c, d = k11 * a + k12 * c, k11 * b + k12 * d, k21 * a + k22 * c, k21 * b + k22 * d
        return (a + d).real


class _PreciseTrace:
    """Extended-precision scaled bracket traces (same normalization as ``_TraceModel``).

    Partial products of the monodromy can be huge, so double-precision traces carry a
    cancellation error far above machine epsilon; the phase structure and the
    threshold envelopes are therefore evaluated here.
    """

    def __init__(self, couplings: Couplings, p: int, q: int, theta_ref: float,
                 dps: int = MP_DPS):
        self.dps = dps
        with mpmath.workdps(dps):
            self.l1 = mpmath.mpf(couplings.lambda1)
            self.l2 = mpmath.mpf(couplings.lambda2)
            self.l1p = mpmath.sqrt((1 - self.l1) * (1 + self.l1))
            self.q = q
            self.offsets = [mpmath.mpf((j * p) % q) / q for j in range(q)]
            th0 = mpmath.mpf(theta_ref)
            self.step_scale = [1 / (self.l1 * mpmath.sqrt(1 - (self.l2 * mpmath.sinpi(2 * (th0 + o))) ** 2))
                               for o in self.offsets]
            # equally spaced in working precision so the mode q term cancels exactly
            self.avg_phases = [th0 + mpmath.mpf(k) / (4 * q) for k in range(4)]

    def trace(self, theta, zeta):
        with mpmath.workdps(self.dps):
            z = mpmath.expj(mpmath.mpf(zeta))
            zi = 1 / z
            l1p, l2 = self.l1p, self.l2
            a, b, c, d = mpmath.mpc(1), mpmath.mpc(0), mpmath.mpc(0), mpmath.mpc(1)
            th = mpmath.mpf(theta)
            for off, sc in zip(self.offsets, self.step_scale):
                s = l2 * mpmath.sinpi(2 * (th + off))
                k11, k12 = (z + l1p * s) * sc, (-l1p * zi - s) * sc
                k21, k22 = (-l1p * z - s) * sc, (zi + l1p * s) * sc
                a, b, c, d = k11 * a + k12 * c, k11 * b + k12 * d, k21 * a + k22 * c, k21 * b + k22 * d
            return (a + d).real


# -- band structures -------------------------------------------------------------


def _default_resolution(q: int) -> int:
    return max(512, 64 * q)


def _default_theta_grid(q: int) -> int:
    return max(8, 2 * q)


def _envelope_max(precise: "_PreciseTrace", ga, gb, sign: int, grid_n: int) -> tuple[float, float]:
    """Maximize ``2 N(theta) + sign * g(theta)`` over one phase period.

    ``N`` and ``g`` vary by amounts far below double resolution for large ``q``, so the
    function is evaluated in extended precision relative to a baseline; the optimizer
    then works on a well-resolved double.  Returns ``(max value, maximizing phase)``.
    """
    q = precise.q
    ref = [1 / (precise.l1 * sc) for sc in precise.step_scale]

    def h(t):
        t = mpmath.mpf(t)
        n_t = mpmath.mpf(1)
        for off, r0 in zip(precise.offsets, ref):
            n_t *= mpmath.sqrt(1 - (precise.l2 * mpmath.sinpi(2 * (t + off))) ** 2) / r0
        w = 2 * mpmath.pi * q * t
        return 2 * n_t + sign * (ga * mpmath.cos(w) + gb * mpmath.sin(w))

    with mpmath.workdps(precise.dps):
        m = int(4 * math.ceil(grid_n / 4))
        grid = np.arange(m) / (m * q)
        vals = [h(t) for t in grid]
        i = max(range(m), key=lambda k: vals[k])
        base = vals[i]
        spread = max(abs(v - base) for v in vals)
        scale = spread if spread > 0 else mpmath.mpf(1)

        def rel(t):
            return float((h(t) - base) / scale)

        step = 1.0 / (m * q)
        res = minimize_scalar(lambda t: -rel(t), bounds=(grid[i] - step, grid[i] + step),
                              method="bounded", options={"xatol": 1e-15})
        if res.success and -res.fun >= 0.0:
            return float(base + mpmath.mpf(-res.fun) * scale), float(res.x)
        return float(base), float(grid[i])


def _closed_form_arcs(lam: float) -> list:
    """``{zeta : |cos zeta| <= lam}``."""
    if lam >= 1.0:
        return [Arc(0.0, TWO_PI)]
    if lam <= 0.0:
        return []
    a = math.acos(lam)
    return [Arc(a, math.pi - a), Arc(math.pi + a, TWO_PI - a)]


def _mode_q_coefficients(precise: "_PreciseTrace", zeta: float):
    """Cosine/sine coefficients of the mode q phase term and the phase mean at ``zeta``."""
    vals = [precise.trace(t, zeta) for t in precise.avg_phases]
    mean = sum(vals) / 4
    ga = gb = mpmath.mpf(0)
    for t, v in zip(precise.avg_phases, vals):
        w = 2 * mpmath.pi * precise.q * t
        ga += (v - mean) * mpmath.cos(w) / 2
        gb += (v - mean) * mpmath.sin(w) / 2
    return ga, gb, mean


def gauge_twist(couplings: Couplings, p: int, q: int, theta: float) -> float:
    """Phase accumulated over one period by the gauge that makes the odd ``rho`` real.

    The trace of the q-fold two-step product at a walk eigenvalue with Bloch twist
    ``kappa`` equals ``2 cos(kappa + gauge_twist)``.
    """
    ang = TWO_PI * (theta + np.arange(q) * p / q)
    rho = couplings.lambda2 * np.cos(ang) - 1j * couplings.lambda2p
    return float(np.sum(np.angle(rho)))


def _edge_angles(couplings: Couplings, p_over_q: Frequency, theta: float,
                 level: int) -> np.ndarray:
    """The ``2q`` angles where the fixed-phase trace equals ``2 * level`` (``level = +-1``).

    They are the eigenvalues of the walk on Bloch waves whose twist makes the trace
    ``+-2``; unitarity makes them accurate to rounding however steep the trace is.
    """
    p, q = p_over_q.p, p_over_q.q
    twist = -gauge_twist(couplings, p, q, theta) + (0.0 if level > 0 else math.pi)
    w = np.linalg.eigvals(walk_bloch(couplings, p_over_q, theta, twist))
    return np.sort(np.angle(w) % TWO_PI)


EDGE_ANGLE_TOL = 1e-9


def edge_angle_errors(couplings: Couplings, p_over_q: Frequency, theta: float,
                      edges, level: int, step: float = 1e-7, precise: bool = False) -> np.ndarray:
    """Distance in angle from each of ``edges`` to the nearest crossing of ``2 level``.

    Near a steep edge the nearest double to the true angle already moves the trace by
    ``ulp * slope``, so the trace residual itself is not a meaningful accuracy measure.
    The default (double precision) estimate is ``|trace - 2 level| / max(1, |slope|)``.

    With ``precise=True`` the trace, slope and curvature are evaluated in extended
    precision and the nearest root of the local quadratic model is returned.  This is
    the reliable measure at touching bands, where the trace meets the level
    tangentially and its double-precision value can be off by several units.  If the
    model misses the level, the distance to its vertex plus the half-width of the miss
    is returned.
    """
    edges = np.asarray(edges, dtype=float)
    if precise:
        return _precise_edge_errors(couplings, p_over_q, theta, edges, level)
    traces = monodromy_traces(couplings, p_over_q, theta, edges)
    slope = np.abs(monodromy_traces(couplings, p_over_q, theta, edges + step)
                   - monodromy_traces(couplings, p_over_q, theta, edges - step)) / (2 * step)
    return np.abs(traces - 2.0 * level) / np.maximum(slope, 1.0)


def _precise_edge_errors(couplings, p_over_q, theta, edges, level) -> np.ndarray:
    p, q = _require_rational(p_over_q)
    dps = 60 + q
    # normalized at the evaluated phase, so these are the true traces
    precise = _PreciseTrace(couplings, p, q, theta, dps=dps)
    out = np.empty(len(edges))
    with mpmath.workdps(dps):
        h = mpmath.mpf(10) ** (-(dps // 3))
        for i, e in enumerate(edges):
            z = mpmath.mpf(float(e))
            t0 = precise.trace(theta, z) - 2 * level
            tp = precise.trace(theta, z + h) - 2 * level
            tm = precise.trace(theta, z - h) - 2 * level
            s = (tp - tm) / (2 * h)
            c = (tp - 2 * t0 + tm) / h ** 2
            out[i] = float(_nearest_root(t0, s, c))
    return out


def _nearest_root(d, s, c):
    """Smallest ``|x|`` with ``d + s x + c x^2 / 2 = 0`` (see ``edge_angle_errors``)."""
    if d == 0:
        return mpmath.mpf(0)
    if c == 0:
        return abs(d / s) if s != 0 else mpmath.inf
    disc = s * s - 2 * c * d
    if disc >= 0:
        r = mpmath.sqrt(disc)
        # numerically stable pair of roots
        qv = -(s + mpmath.sign(s) * r) if s != 0 else -r
        roots = [qv / c] + ([2 * d / qv] if qv != 0 else [])
        return min(abs(x) for x in roots)
    x_v = -s / c
    miss = d - s * s / (2 * c)
    return abs(x_v) + mpmath.sqrt(abs(2 * miss / c))


def _check_edge_levels(couplings: Couplings, p_over_q: Frequency, theta: float,
                       edges: np.ndarray, level: int) -> None:
    dev = float(np.median(edge_angle_errors(couplings, p_over_q, theta, edges, level)))
    if not dev < EDGE_ANGLE_TOL:
        raise StructuralMismatchError(
            f"band edges miss the trace level {2 * level:+d} by {dev:.3g} rad")


def _pair_edges(upper: np.ndarray, lower: np.ndarray) -> tuple[list, list, bool]:
    """Group sorted edge points into bands.

    Every band runs between one upper-level and one lower-level edge, and consecutive
    bands have opposite orientation, so after sorting all ``4q`` points the bands are
    consecutive pairs containing one point of each kind.  Edges of a band narrower than
    the rounding error may come out swapped; the pairing does not depend on their order.
    Returns ``(arcs, touching, consistent)``.
    """
    pts = np.concatenate([upper, lower])
    kind = np.concatenate([np.ones(len(upper), int), np.zeros(len(lower), int)])
    order = np.argsort(pts, kind="stable")
    pts, kind = pts[order], kind[order]
    m = len(pts)
    best, best_off = -1, 0
    for off in (0, 1):
        a = (off + 2 * np.arange(m // 2)) % m
        score = int(np.count_nonzero(kind[a] != kind[(a + 1) % m]))
        if score > best:
            best, best_off = score, off
    a = (best_off + 2 * np.arange(m // 2)) % m
    arcs = sorted((Arc.between(pts[i], pts[(i + 1) % m]) for i in a), key=lambda x: x.lo)
    touching = []
    n = len(arcs)
    for k in range(n if n > 1 else 0):
        gap = (arcs[(k + 1) % n].lo - arcs[k].hi) % TWO_PI
        if gap <= MERGE_TOL or gap >= TWO_PI - 1e-12:
            touching.append(arcs[k].hi % TWO_PI)
    return arcs, sorted(touching), best == m // 2


def band_arcs(couplings: Couplings, p_over_q: Frequency, theta_grid_size: Optional[int] = None,
              zeta_resolution: Optional[int] = None, check_structure: bool = True) -> BandStructure:
    """Union over phases of the periodic spectra at ``Phi = p/q``, split into bands.

    Upper band edges are the points where the trace at the phase ``theta_hi`` maximizing
    ``2N - g`` equals ``+2``; lower edges are where the trace at ``theta_lo`` equals
    ``-2``.  Bands that touch (a closed gap) stay separate arcs sharing an endpoint.
    ``theta_grid_size`` sets the phase grid seeding the search for ``theta_hi`` and
    ``theta_lo``; ``zeta_resolution`` the angle grid used by the structure check.
    """
    p, q = _require_rational(p_over_q)
    l1, l2 = couplings.lambda1, couplings.lambda2
    if theta_grid_size is not None and theta_grid_size < 1:
        raise ValueError("theta_grid_size must be positive")
    if zeta_resolution is not None and zeta_resolution < 4 * q:
        raise ValueError("zeta_resolution must be at least 4q")
    grid_n = theta_grid_size or _default_theta_grid(q)
    res0 = zeta_resolution or _default_resolution(q)
    base = dict(freq=p_over_q, couplings=couplings, theta_grid=grid_n, zeta_resolution=res0)

    if l1 == 0.0 and l2 == 0.0:
        return BandStructure((), note="degenerate: spectrum is the two points +-i", **base)
    if l1 == 0.0 or l2 == 0.0:
        # constant (or decoupled) operator; closed form shared by the dual pair
        lam = max(l1, l2)
        return BandStructure(tuple(_closed_form_arcs(lam)), thresholds=(-2.0, 2.0),
                             note="phase-independent closed form |cos zeta| <= lambda", **base)

    theta_ref = 0.1234567 / q
    model = _TraceModel(couplings, p, q, theta_ref)
    avg_phases = theta_ref + np.arange(4) / (4.0 * q)

    # reference angle where the trace is small keeps the phase term well conditioned
    coarse = TWO_PI * np.arange(res0) / res0
    samples = model.bracket_trace(avg_phases, coarse)
    fc = np.abs(samples.mean(axis=0))
    i_ref = int(np.argmin(fc))
    far = circle_distance(coarse, coarse[i_ref])
    i_chk = int(np.argmin(np.where((far > math.pi / 8) & (far < 7 * math.pi / 8), fc, np.inf)))

    if check_structure:
        _check_phase_structure(couplings, p, q, theta_ref, float(coarse[i_ref]),
                               float(coarse[i_chk]))
    # phase term: only the modes +-q survive, recovered from the four averaging phases
    precise = _PreciseTrace(couplings, p, q, theta_ref)
    with mpmath.workdps(precise.dps):
        ga, gb, _ = _mode_q_coefficients(precise, float(coarse[i_ref]))
    hi, th_hi = _envelope_max(precise, ga, gb, -1, grid_n)
    neg_lo, th_lo = _envelope_max(precise, ga, gb, +1, grid_n)
    lo = -neg_lo

    upper = _edge_angles(couplings, p_over_q, th_hi, +1)
    lower = _edge_angles(couplings, p_over_q, th_lo, -1)
    if check_structure:
        _check_edge_levels(couplings, p_over_q, th_hi, upper, +1)
        _check_edge_levels(couplings, p_over_q, th_lo, lower, -1)
    arcs, touching, consistent = _pair_edges(upper, lower)
    note = "" if consistent else "edge pairing inconsistent"
    bs = BandStructure(tuple(arcs), thresholds=(lo, hi),
                       extremal_phases=(th_lo % 1.0, th_hi % 1.0),
                       touching=tuple(touching), note=note, **base)
    if bs.count != 2 * q or not consistent:
        warnings.warn(f"{p}/{q}: found {bs.count} bands, expected {2 * q} ({note or 'ok'})",
                      BandCountWarning, stacklevel=2)
    return bs


def _check_phase_structure(couplings: Couplings, p: int, q: int, theta_ref: float,
                           z_ref: float, z_chk: float) -> None:
    """Verify in extended precision that the phase dependence of the trace is a single
    ``zeta``-independent mode ``q`` term."""
    precise = _PreciseTrace(couplings, p, q, theta_ref)
    with mpmath.workdps(precise.dps):
        ga, gb, mean_ref = _mode_q_coefficients(precise, z_ref)
        ga_c, gb_c, mean_chk = _mode_q_coefficients(precise, z_chk)
        dev = max(abs(ga_c - ga), abs(gb_c - gb))
        size = max(abs(ga), abs(gb), abs(mean_ref), abs(mean_chk), 1)
        for k in (1, 3):
            t = mpmath.mpf(theta_ref) + mpmath.mpf(k) / (8 * q)
            w = 2 * mpmath.pi * q * t
            g_t = ga * mpmath.cos(w) + gb * mpmath.sin(w)
            dev = max(dev, abs(precise.trace(t, z_ref) - mean_ref - g_t))
        if dev > mpmath.mpf(10) ** (-20) * size:
            raise StructuralMismatchError(
                f"phase dependence of the trace is not a zeta-independent mode q term "
                f"(deviation {float(dev):.3g})")


def fixed_phase_bands(couplings: Couplings, p_over_q: Frequency, theta: float) -> list:
    """Bands ``{|tr M(zeta, theta)| <= 2}`` of the periodic operator at one phase."""
    _require_rational(p_over_q)
    if couplings.lambda1 == 0.0:
        raise ValueError("lambda1 = 0: two-step map undefined")
    upper = _edge_angles(couplings, p_over_q, theta, +1)
    lower = _edge_angles(couplings, p_over_q, theta, -1)
    return _pair_edges(upper, lower)[0]


def spectrum_approx(couplings: Couplings, phi_real, depth: int, **kwargs) -> BandStructure:
    """Band structure at the ``depth``-th continued-fraction convergent of ``phi_real``."""
    if isinstance(phi_real, Frequency) and phi_real.is_rational:
        bs = band_arcs(couplings, phi_real, **kwargs)
        return replace(bs, note="rational frequency: exact band structure")
    x = phi_real.value if isinstance(phi_real, Frequency) else float(phi_real)
    cf = arithmetic.continued_fraction(x, depth)
    if cf.rational and len(cf.convergents) < depth:
        p, q = cf.convergents[-1] if cf.convergents else (0, 1)
        bs = band_arcs(couplings, Frequency.rational(p, q), **kwargs)
        return replace(bs, note="frequency is rational to machine precision", convergent=(p, q))
    p, q = cf.convergent(depth)
    bs = band_arcs(couplings, Frequency.rational(p, q), **kwargs)
    return replace(bs, convergent=(p, q), note=f"convergent {p}/{q} of {x!r} at depth {depth}")


# -- gaps and labels -------------------------------------------------------------


def gaps(bs: BandStructure, width_floor: float = WIDTH_FLOOR) -> list:
    return [GapRecord(g, g.length) for g in complement_arcs(list(bs.arcs)) if g.length > width_floor]


def fit_label(ids: float, phi: float, k_max: int) -> tuple[int, int, float]:
    """Integer ``k`` (smallest ``|k|`` among ties) minimizing ``||2 ids - k phi||``.

    Returns ``(k, m, residual)`` with ``m = round(2 ids - k phi)``.
    """
    ks = np.arange(-k_max, k_max + 1)
    diff = 2.0 * ids - ks * phi
    resid = np.abs(diff - np.round(diff))
    best = resid.min()
    ties = ks[resid <= best + 1e-9]
    k = int(sorted(ties, key=lambda k: (abs(k), -k))[0])
    r = 2.0 * ids - k * phi
    return k, int(round(r)), float(abs(r - round(r)))


def gap_labels(couplings: Couplings, freq: Frequency, gap_list, rot_iters: int = 20_000,
               k_max: Optional[int] = None, theta: float = 0.0) -> list:
    """Attach integrated-density-of-states values and gap labels to gaps."""
    gap_list = list(gap_list)
    if not gap_list:
        return []
    if k_max is None:
        k_max = 2 * freq.q if freq.is_rational else 50
    mids = np.array([g.arc.mid for g in gap_list])
    if couplings.lambda1 == 0.0:
        spec = CocycleSpec(Family.DUAL_TWO_STEP, couplings, freq, 0.0)
    else:
        spec = CocycleSpec(Family.TWO_STEP, couplings, freq, 0.0)
    ids = rotation_numbers(spec, mids, rot_iters, theta)
    out = []
    for g, r in zip(gap_list, ids):
        k, m, resid = fit_label(float(r), freq.value, k_max)
        out.append(replace(g, ids=float(r), label=k, offset=m, residual=resid,
                           flagged=resid > LABEL_RESIDUAL_TOL))
    return out


# -- symmetry and butterflies ----------------------------------------------------


def symmetry_check(bs: BandStructure) -> tuple[float, float]:
    """Hausdorff deviations of the band set from its conjugate and its negative."""
    arcs = list(bs.arcs)
    conj = merge_arcs([a.mapped(-1, 0.0) for a in arcs])
    neg = merge_arcs([a.mapped(1, math.pi) for a in arcs])
    return hausdorff_distance(arcs, conj), hausdorff_distance(arcs, neg)


def reduced_fractions(q_max: int, q_min: int = 2) -> list:
    return [(p, q) for q in range(q_min, q_max + 1) for p in range(q) if math.gcd(p, q) == 1]


@dataclass(frozen=True)
class ButterflyRecord:
    p: int
    q: int
    bands: Optional[BandStructure]
    error: str = ""
    warnings: tuple = field(default=())


def _butterfly_task(args) -> ButterflyRecord:
    couplings, p, q, res, grid = args
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            bs = band_arcs(couplings, Frequency.rational(p, q), grid, res)
        except Exception as exc:  # recorded, the sweep continues
            return ButterflyRecord(p, q, None, f"{type(exc).__name__}: {exc}")
    return ButterflyRecord(p, q, bs, "", tuple(str(w.message) for w in caught))


def butterfly(couplings: Couplings, q_max: int, zeta_resolution: Optional[int] = None,
              theta_grid: Optional[int] = None, workers: Optional[int] = None) -> list:
    """Band structures for every reduced ``p/q`` with ``2 <= q <= q_max`` in (q, p) order."""
    if q_max < 2:
        raise ValueError("q_max must be at least 2")
    tasks = [(couplings, p, q, zeta_resolution, theta_grid) for p, q in reduced_fractions(q_max)]
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        return [_butterfly_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_butterfly_task, tasks, chunksize=4))
