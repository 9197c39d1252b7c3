"""Unitary almost-Mathieu walk: parameters, coin/shift actions and the GECMV form.

States of the walk live on ``l2(Z) (x) C^2`` and are stored as finite windows of
site amplitudes ``(psi_n^+, psi_n^-)``.  The same operator, written as a
five-diagonal CMV matrix on ``l2(Z)``, is built from Verblunsky pairs
``(alpha_j, rho_j)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

TWO_PI = 2.0 * math.pi

# CMV offsets (a, b) with delta_n^+ -> delta_{2n+a}, delta_n^- -> delta_{2n+b}.
# Fixed by gecmv_vs_walk_check; the other entries are the tried alternatives.
INTERLEAVING = (-1, 0)
CANDIDATE_INTERLEAVINGS = ((-1, 0), (0, 1), (1, 0), (0, -1))


class StructuralMismatchError(RuntimeError):
    """The walk and its CMV form disagree under every candidate site ordering."""


@dataclass(frozen=True)
class Couplings:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ValueError(f"{name}={v!r} outside [0, 1]")

    @property
    def lambda1p(self) -> float:
        return _complement(self.lambda1)

    @property
    def lambda2p(self) -> float:
        return _complement(self.lambda2)

    def swapped(self) -> "Couplings":
        return Couplings(self.lambda2, self.lambda1)


def _complement(lam: float) -> float:
    return math.sqrt(max(0.0, (1.0 - lam) * (1.0 + lam)))


@dataclass(frozen=True)
class Frequency:
    """Either an exact reduced fraction ``p/q`` or a real number in [0, 1)."""

    value: float
    p: int | None = None
    q: int | None = None

    @classmethod
    def rational(cls, p: int, q: int) -> "Frequency":
        if q <= 0:
            raise ValueError("denominator must be positive")
        fr = Fraction(p, q)
        p, q = fr.numerator % fr.denominator, fr.denominator
        return cls(p / q, p, q)

    @classmethod
    def real(cls, x: float) -> "Frequency":
        x = float(x) % 1.0
        return cls(x)

    @classmethod
    def parse(cls, text: str) -> "Frequency":
        if "/" in text:
            p, q = text.split("/")
            return cls.rational(int(p), int(q))
        return cls.real(float(text))

    @property
    def is_rational(self) -> bool:
        return self.q is not None

    def __str__(self) -> str:
        return f"{self.p}/{self.q}" if self.is_rational else repr(self.value)


FreqLike = Union[Frequency, float]


def phi_value(freq: FreqLike) -> float:
    return freq.value if isinstance(freq, Frequency) else float(freq)


def wrap_phase(theta: float) -> float:
    return theta % 1.0


@dataclass(frozen=True)
class VerblunskyPair:
    alpha: complex
    rho: complex

    def sphere_defect(self) -> float:
        return abs(abs(self.alpha) ** 2 + abs(self.rho) ** 2 - 1.0)


def coin_matrix(lam: float, angle: float) -> np.ndarray:
    """Modified rotation coin ``Q_{lam, angle}``; ``angle`` in radians."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"coupling {lam!r} outside [0, 1]")
    lp = _complement(lam)
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[lam * c + 1j * lp, -lam * s],
                     [lam * s, lam * c - 1j * lp]])


@dataclass(frozen=True)
class StateWindow:
    """Amplitudes on sites ``lo .. lo+len(amps)-1``; column 0 is ``+``, column 1 is ``-``.

    ``margin`` counts sites at each edge whose values depend on amplitudes outside the
    window.  A window holding an exactly finitely supported vector has ``margin=0``.
    """

    lo: int
    amps: np.ndarray
    margin: int = 0

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=complex)
        if amps.ndim != 2 or amps.shape[1] != 2:
            raise ValueError("amps must have shape (N, 2)")
        object.__setattr__(self, "amps", amps)

    @property
    def hi(self) -> int:
        return self.lo + len(self.amps) - 1

    @classmethod
    def delta(cls, n: int, sign: int, pad: int = 0) -> "StateWindow":
        amps = np.zeros((2 * pad + 1, 2), dtype=complex)
        amps[pad, 0 if sign > 0 else 1] = 1.0
        return cls(n - pad, amps)

    def at(self, n: int) -> np.ndarray:
        if self.lo <= n <= self.hi:
            return self.amps[n - self.lo]
        return np.zeros(2, dtype=complex)

    def interior(self) -> tuple[int, np.ndarray]:
        """First site index and amplitudes of the uncontaminated part."""
        m = self.margin
        if 2 * m >= len(self.amps):
            return self.lo + m, self.amps[:0]
        return self.lo + m, self.amps[m:len(self.amps) - m]

    def norm(self, interior_only: bool = True) -> float:
        amps = self.interior()[1] if interior_only else self.amps
        return float(np.linalg.norm(amps))


def _grown_margin(margin: int) -> int:
    # unknown exterior feeds two new edge sites once anything was unknown
    return 0 if margin == 0 else margin + 2


def shift_apply(lambda1: float, state: StateWindow) -> StateWindow:
    """Conditional shift ``delta_n^+ -> l delta_{n+1}^+ + l' delta_n^-``,
    ``delta_n^- -> l delta_{n-1}^- - l' delta_n^+``."""
    lam, lp = lambda1, _complement(lambda1)
    a = state.amps
    out = np.zeros((len(a) + 2, 2), dtype=complex)
    # out index i corresponds to site lo - 1 + i
    out[2:, 0] += lam * a[:, 0]
    out[1:-1, 1] += lp * a[:, 0]
    out[:-2, 1] += lam * a[:, 1]
    out[1:-1, 0] -= lp * a[:, 1]
    return StateWindow(state.lo - 1, out, _grown_margin(state.margin))


def coin_apply(couplings: Couplings, freq: FreqLike, theta: float,
               state: StateWindow) -> StateWindow:
    lam, lp = couplings.lambda2, couplings.lambda2p
    n = np.arange(state.lo, state.hi + 1)
    ang = TWO_PI * (n * phi_value(freq) + theta)
    c, s = np.cos(ang), np.sin(ang)
    p, m = state.amps[:, 0], state.amps[:, 1]
    out = np.empty_like(state.amps)
    out[:, 0] = (lam * c + 1j * lp) * p - lam * s * m
    out[:, 1] = lam * s * p + (lam * c - 1j * lp) * m
    return StateWindow(state.lo, out, state.margin)


def walk_apply(couplings: Couplings, freq: FreqLike, theta: float,
               state: StateWindow) -> StateWindow:
    """One step of ``W = S_{lambda1} Q_{lambda2, Phi, theta}``."""
    return shift_apply(couplings.lambda1, coin_apply(couplings, freq, theta, state))


def walk_dense(couplings: Couplings, freq: FreqLike, theta: float, lo: int, hi: int,
               periodic: bool = False) -> np.ndarray:
    """Dense matrix of the walk on sites ``lo..hi`` (basis ``(n,+), (n,-)`` interleaved).

    With ``periodic=True`` the window is closed into a ring; this is exact only when
    the coin sequence is periodic with a period dividing the ring length.
    """
    size = hi - lo + 1
    W = np.zeros((2 * size, 2 * size), dtype=complex)
    for j in range(size):
        for s in (0, 1):
            st = StateWindow.delta(lo + j, 1 if s == 0 else -1)
            out = walk_apply(couplings, freq, theta, st)
            for i, amp in enumerate(out.amps):
                site = out.lo + i
                if periodic:
                    site = lo + (site - lo) % size
                elif not lo <= site <= hi:
                    continue
                W[2 * (site - lo):2 * (site - lo) + 2, 2 * j + s] += amp
    return W


def walk_bloch(couplings: Couplings, freq: Frequency, theta: float,
               twist: float) -> np.ndarray:
    """Walk on Bloch waves ``psi_{n+q} = exp(i twist) psi_n`` at ``Phi = p/q``.

    A ``2q x 2q`` unitary in the basis ``(n, +), (n, -)``, ``n = 0..q-1``.
    """
    if not freq.is_rational:
        raise ValueError("a rational frequency is required")
    q = freq.q
    W = np.zeros((2 * q, 2 * q), dtype=complex)
    for j in range(q):
        for s in (0, 1):
            out = walk_apply(couplings, freq, theta, StateWindow.delta(j, 1 if s == 0 else -1))
            for i, amp in enumerate(out.amps):
                site = out.lo + i
                wraps, cell = divmod(site, q)
                W[2 * cell:2 * cell + 2, 2 * j + s] += amp * np.exp(-1j * twist * wraps)
    return W


def verblunsky_raw(couplings: Couplings, freq: FreqLike, theta: float,
                   index: int) -> VerblunskyPair:
    """Dynamically defined coefficient at CMV index ``index`` (complex rho on odd sites)."""
    if index % 2 == 0:
        return VerblunskyPair(complex(couplings.lambda1p), complex(couplings.lambda1))
    n = (index + 1) // 2
    ang = TWO_PI * (theta + n * phi_value(freq))
    l2 = couplings.lambda2
    return VerblunskyPair(complex(l2 * math.sin(ang)),
                          complex(l2 * math.cos(ang), -couplings.lambda2p))


def verblunsky_gauged(couplings: Couplings, freq: FreqLike, theta: float,
                      index: int) -> VerblunskyPair:
    """Same alphas as :func:`verblunsky_raw`, with every rho real and nonnegative."""
    if index % 2 == 0:
        return verblunsky_raw(couplings, freq, theta, index)
    n = (index + 1) // 2
    s = couplings.lambda2 * math.sin(TWO_PI * (theta + n * phi_value(freq)))
    return VerblunskyPair(complex(s), complex(math.sqrt(max(0.0, 1.0 - s * s))))


@dataclass(frozen=True)
class CmvWindow:
    """Verblunsky pairs at CMV indices ``lo..hi``; ``lo`` must be even."""

    lo: int
    alpha: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        if self.lo % 2:
            raise ValueError("CmvWindow.lo must be even")
        alpha = np.asarray(self.alpha, dtype=complex)
        rho = np.asarray(self.rho, dtype=complex)
        if alpha.shape != rho.shape or alpha.ndim != 1:
            raise ValueError("alpha and rho must be 1-d arrays of equal length")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "rho", rho)

    @property
    def hi(self) -> int:
        return self.lo + len(self.alpha) - 1

    @classmethod
    def from_pairs(cls, lo: int, pairs) -> "CmvWindow":
        pairs = list(pairs)
        return cls(lo, [p.alpha for p in pairs], [p.rho for p in pairs])

    @classmethod
    def uamo(cls, couplings: Couplings, freq: FreqLike, theta: float, lo: int, hi: int,
             gauged: bool = True) -> "CmvWindow":
        gen = verblunsky_gauged if gauged else verblunsky_raw
        return cls.from_pairs(lo, (gen(couplings, freq, theta, j) for j in range(lo, hi + 1)))

    def pair(self, j: int) -> VerblunskyPair:
        return VerblunskyPair(self.alpha[j - self.lo], self.rho[j - self.lo])


def gecmv_apply(window: CmvWindow, v) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``E = L M`` to ``v``, a vector on CMV indices ``lo..hi`` (zero outside).

    Returns ``(E v restricted to lo..hi, mask)``.  ``mask`` flags rows whose value needs
    the missing coefficient at index ``lo - 1``, which happens when ``v[lo] != 0``.
    Weight pushed beyond ``hi`` is dropped.
    """
    v = np.asarray(v, dtype=complex)
    n = len(v)
    if v.shape != window.alpha.shape:
        raise ValueError("v must match the window length")
    a, r = window.alpha, window.rho
    vp = np.append(v, 0.0)
    # M blocks sit on (j, j+1) for odd CMV j, i.e. odd positions since lo is even
    w = np.zeros(n + 1, dtype=complex)
    j = np.arange(1, n, 2)
    w[j] = np.conj(a[j]) * vp[j] + r[j] * vp[j + 1]
    w[j + 1] = np.conj(r[j]) * vp[j] - a[j] * vp[j + 1]
    # w[0] would be -alpha_{lo-1} v[0]; left unknown
    mask = np.zeros(n, dtype=bool)
    if v[0] != 0:
        mask[:2] = True
    out = np.zeros(n + 1, dtype=complex)
    j = np.arange(0, n, 2)
    out[j] = np.conj(a[j]) * w[j] + r[j] * w[j + 1]
    out[j + 1] = np.conj(r[j]) * w[j] - a[j] * w[j + 1]
    return out[:n], mask


def gecmv_matrix(window: CmvWindow) -> np.ndarray:
    """Columns ``E delta_j`` for every index of the window (via :func:`gecmv_apply`)."""
    n = len(window.alpha)
    E = np.zeros((n, n), dtype=complex)
    for k in range(n):
        e = np.zeros(n, dtype=complex)
        e[k] = 1.0
        E[:, k] = gecmv_apply(window, e)[0]
    return E


def interleave_index(n: int, sign: int, interleaving=INTERLEAVING) -> int:
    return 2 * n + (interleaving[0] if sign > 0 else interleaving[1])


def gecmv_vs_walk_check(couplings: Couplings, freq: FreqLike, theta: float,
                        window_size: int = 16) -> tuple[float, tuple[int, int]]:
    """Compare the walk with the CMV matrix of the raw UAMO coefficients.

    Both operators are assembled densely; for each candidate site ordering the
    maximal entry deviation over columns of interior sites is computed.  Returns the
    smallest deviation and the ordering that achieved it.
    """
    if window_size < 8:
        raise ValueError("window_size must be at least 8")
    sites = range(0, window_size)
    W = walk_dense(couplings, freq, theta, 0, window_size - 1)
    # CMV window covering every candidate image, with a generous even margin
    lo, hi = -4, 2 * window_size + 4
    E = gecmv_matrix(CmvWindow.uamo(couplings, freq, theta, lo, hi, gauged=False))
    interior = range(2, window_size - 2)
    best = (math.inf, None)
    for inter in CANDIDATE_INTERLEAVINGS:
        idx = {(n, s): interleave_index(n, s, inter) - lo for n in sites for s in (1, -1)}
        dev = 0.0
        for n in interior:
            for s in (1, -1):
                col_w = 2 * n + (0 if s > 0 else 1)
                col_e = idx[(n, s)]
                for m in sites:
                    for t in (1, -1):
                        row_w = 2 * m + (0 if t > 0 else 1)
                        dev = max(dev, abs(W[row_w, col_w] - E[idx[(m, t)], col_e]))
                # the image must also carry no weight outside the walk window
                used = {idx[(m, t)] for m in sites for t in (1, -1)}
                stray = [abs(E[r, col_e]) for r in range(E.shape[0]) if r not in used]
                dev = max(dev, max(stray, default=0.0))
        if dev < best[0]:
            best = (dev, inter)
    if best[0] > 1e-8:
        raise StructuralMismatchError(
            f"walk and CMV form disagree (best deviation {best[0]:.3e})")
    return best
