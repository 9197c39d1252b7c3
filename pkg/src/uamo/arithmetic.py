"""Continued fractions, Diophantine and nonresonance diagnostics, and coupling regimes."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .model import Couplings

RATIONAL_TOL = 1e-15
MAX_DEPTH = 40


@dataclass(frozen=True)
class ContinuedFraction:
    """Expansion ``x = [a0; a1, a2, ...]`` with convergents ``p_k/q_k`` for k = 1..depth.

    ``partial_quotients`` starts with ``a0``.  ``rational`` is set when the expansion
    terminated, or when a convergent matched ``x`` to machine precision, in which case
    the expansion stops there.
    """

    x: float
    partial_quotients: list
    convergents: list
    rational: bool = False

    def convergent(self, depth: int) -> tuple[int, int]:
        if not 1 <= depth <= len(self.convergents):
            raise IndexError(f"depth {depth} not available (have {len(self.convergents)})")
        return self.convergents[depth - 1]


def continued_fraction(x: float, depth: int) -> ContinuedFraction:
    """Expand ``x`` (taken exactly as the binary float it is) to ``depth`` quotients."""
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must lie in [1, {MAX_DEPTH}]")
    r = Fraction(x)
    a0 = math.floor(r)
    quotients = [a0]
    convergents = []
    p_prev, q_prev, p, q = 1, 0, a0, 1
    rem = r - a0
    rational = False
    while len(convergents) < depth:
        if rem == 0:
            rational = True
            break
        r = 1 / rem
        a = math.floor(r)
        rem = r - a
        quotients.append(a)
        p_prev, q_prev, p, q = p, q, a * p + p_prev, a * q + q_prev
        convergents.append((p, q))
        if rem == 0 or abs(x - p / q) < RATIONAL_TOL:
            rational = True
            break
    return ContinuedFraction(float(x), quotients, convergents, rational)


def torus_distance(x) -> np.ndarray:
    """``||x||`` on R/Z: distance to the nearest integer."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


@dataclass(frozen=True)
class DiophantineParams:
    kappa: float
    tau: float
    N: int = 10_000

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.tau > 1:
            raise ValueError("tau must exceed 1")
        if self.N < 1:
            raise ValueError("N must be positive")


@dataclass(frozen=True)
class DiophantineResult:
    passed: bool
    worst_n: int
    worst_ratio: float
    horizon: int
    note: str = field(default="finite scan: no violation up to the horizon is not a proof")


def diophantine_check(phi: float, params: DiophantineParams) -> DiophantineResult:
    """Scan ``||n phi|| >= kappa / |n|^(tau + 2)`` for ``0 < n <= N``.

    Negative ``n`` give the same values.  The ratio ``||n phi|| |n|^(tau+2) / kappa``
    is minimized over the scan; the check passes when that minimum is at least 1.
    """
    n = np.arange(1, params.N + 1, dtype=float)
    # n * phi in extended precision keeps ||n phi|| accurate near integers
    frac = torus_distance(np.longdouble(phi) * n.astype(np.longdouble)).astype(float)
    with np.errstate(over="ignore"):
        # an infinite ratio (tiny kappa) simply means the bound holds
        ratio = frac * n ** (params.tau + 2.0) / params.kappa
    i = int(np.argmin(ratio))
    return DiophantineResult(bool(ratio[i] >= 1.0), i + 1, float(ratio[i]), params.N)


@dataclass(frozen=True)
class NonresonanceResult:
    passed: bool
    violations: list
    horizon: int


def nonresonance_check(theta: float, phi: float, tau: float, N: int = 10_000,
                       n_floor: Optional[int] = None) -> NonresonanceResult:
    """List ``|n| <= N`` with ``|sin 2 pi (theta + n phi)| < exp(-|n|^(1/(2 tau)))``.

    A phase is nonresonant when only finitely many ``n`` violate the bound, so a few
    violations at small ``|n|`` are expected (``theta = 0`` at the golden mean has them
    at ``n = 4, 17, 72``).  The finite scan passes when no violation has
    ``|n| > n_floor``; by default ``n_floor = N // 2``, i.e. the upper half of the
    horizon must be clean.
    """
    if n_floor is None:
        n_floor = N // 2
    n = np.arange(-N, N + 1)
    arg = torus_distance(np.longdouble(theta) + np.longdouble(phi) * n.astype(np.longdouble))
    size = np.abs(np.sin(2.0 * math.pi * arg.astype(float)))
    bound = np.exp(-np.abs(n).astype(float) ** (1.0 / (2.0 * tau)))
    bad = n[size < bound]
    ordered = sorted(bad.tolist(), key=lambda k: (abs(k), k))
    passed = all(abs(k) <= n_floor for k in ordered)
    return NonresonanceResult(passed, ordered, N)


def lyapunov_floor(couplings: Couplings) -> float:
    """``log[l2 (1 + l1') / (l1 (1 + l2'))]``; ``+inf`` when ``l1 = 0``, ``-inf`` when ``l2 = 0``."""
    l1, l2 = couplings.lambda1, couplings.lambda2
    if l1 == 0.0:
        return math.inf
    if l2 == 0.0:
        return -math.inf
    up = math.log(l2) + math.log1p(couplings.lambda1p)
    down = math.log(l1) + math.log1p(couplings.lambda2p)
    return up - down


class Regime(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


CRITICAL_TOL = 1e-12


def phase_classify(couplings: Couplings, tol: float = CRITICAL_TOL) -> Regime:
    diff = couplings.lambda1 - couplings.lambda2
    if abs(diff) <= tol:
        return Regime.CRITICAL
    return Regime.SUBCRITICAL if diff > 0 else Regime.SUPERCRITICAL
