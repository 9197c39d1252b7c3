"""Aubry-Andre duality for the walk: parameter swap, isospectrality and rotation
matching, and the explicit Bloch-wave transform between the dual pair.

The dual of ``W_{l1,l2}`` is the transpose ``W^T_{l2,l1}``.  A Bloch wave of the dual
at phase ``xi``,

    phi_n = exp(2 pi i n theta) * [f+(xi + n Phi), f-(xi + n Phi)],

is turned into an eigenvector of ``W_{l1,l2}`` at phase ``theta`` by mixing the pair
``(f+, f-)`` with ``(1/sqrt 2) [[1, -i], [-i, 1]]`` and reading off Fourier
coefficients.  For rational ``Phi = p/q`` only the values of ``f`` on the orbit
``xi + j/q`` matter; the Fourier coefficients are then those of the finite orbit,
which for a trigonometric polynomial are the aliased sums computed in
:func:`orbit_coefficients`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cocycle import CocycleSpec, Family, eigen_transfer, rotation_numbers
from .model import (TWO_PI, Couplings, Frequency, StateWindow, phi_value, walk_apply)
from .spectrum import band_arcs, hausdorff_distance

MIX = np.array([[1.0, -1.0j], [-1.0j, 1.0]]) / math.sqrt(2.0)
UNMIX = MIX.conj().T
INPUT_TOL = 1e-9


class DegenerateWaveWarning(UserWarning):
    """The wave is identically zero, so a zero residual carries no information."""


class DualityPreconditionError(ValueError):
    """The supplied dual wave does not solve the dual eigenvalue equation."""

    def __init__(self, residual: float, tol: float):
        super().__init__(f"input wave residual {residual:.3g} exceeds {tol:.3g}")
        self.residual = residual
        self.tol = tol


@dataclass(frozen=True)
class FourierVector:
    """Fourier coefficients ``m = lo .. lo+len-1`` of a pair of 1-periodic functions."""

    lo: int
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        plus = np.asarray(self.plus, dtype=complex).ravel()
        minus = np.asarray(self.minus, dtype=complex).ravel()
        if plus.shape != minus.shape:
            raise ValueError("plus and minus coefficient arrays differ in length")
        object.__setattr__(self, "plus", plus)
        object.__setattr__(self, "minus", minus)

    @classmethod
    def from_maps(cls, coeffs_plus: dict, coeffs_minus: dict) -> "FourierVector":
        keys = set(coeffs_plus) | set(coeffs_minus)
        if not keys:
            return cls(0, np.zeros(0), np.zeros(0))
        lo, hi = min(keys), max(keys)
        plus = np.array([coeffs_plus.get(m, 0.0) for m in range(lo, hi + 1)], dtype=complex)
        minus = np.array([coeffs_minus.get(m, 0.0) for m in range(lo, hi + 1)], dtype=complex)
        return cls(lo, plus, minus)

    @property
    def modes(self) -> np.ndarray:
        return self.lo + np.arange(len(self.plus))

    @property
    def coeffs_plus(self) -> dict:
        return {int(m): complex(c) for m, c in zip(self.modes, self.plus)}

    @property
    def coeffs_minus(self) -> dict:
        return {int(m): complex(c) for m, c in zip(self.modes, self.minus)}

    def norm(self) -> float:
        return float(math.sqrt(np.sum(np.abs(self.plus) ** 2 + np.abs(self.minus) ** 2)))

    def shifted(self, k: int) -> "FourierVector":
        """Coefficients moved by ``k`` modes (multiplication by ``exp(2 pi i k x)``)."""
        return FourierVector(self.lo + k, self.plus, self.minus)

    def __call__(self, x) -> np.ndarray:
        """Values ``[f+(x), f-(x)]`` as an array of shape ``(len(x), 2)``; exact finite sums."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        e = np.exp(1j * TWO_PI * np.outer(x, self.modes))
        return np.stack([e @ self.plus, e @ self.minus], axis=1)


@dataclass(frozen=True)
class BlochWave:
    """Dual Bloch wave ``phi_n = exp(2 pi i n theta) base(xi + n Phi)`` at energy ``z``."""

    base: FourierVector
    theta: float
    z: complex
    xi: float = 0.0
    freq: Optional[Frequency] = None

    def samples(self, phi: float, lo: int, hi: int) -> np.ndarray:
        n = np.arange(lo, hi + 1)
        return np.exp(1j * TWO_PI * n * self.theta)[:, None] * self.base(self.xi + n * phi)


def dual_params(couplings: Couplings) -> Couplings:
    """``(l1, l2) -> (l2, l1)``."""
    return couplings.swapped()


def isospectrality_check(couplings: Couplings, p_over_q: Frequency,
                         resolution: Optional[int] = None) -> float:
    """Hausdorff distance between the band structures of a coupling pair and its dual."""
    a = band_arcs(couplings, p_over_q, zeta_resolution=resolution)
    b = band_arcs(dual_params(couplings), p_over_q, zeta_resolution=resolution)
    return hausdorff_distance(a.arcs, b.arcs)


def rotation_match_check(couplings: Couplings, freq, zeta, n: int = 20_000,
                         theta: float = 0.0):
    """``|rot(two-step) - rot(dual two-step)|`` at the same spectral angle(s)."""
    if n < 10_000:
        raise ValueError("n must be at least 1e4")
    zetas = np.atleast_1d(np.asarray(zeta, dtype=float))
    base = CocycleSpec(Family.TWO_STEP, couplings, freq, 0.0)
    dual = CocycleSpec(Family.DUAL_TWO_STEP, couplings, freq, 0.0)
    if couplings.lambda1 == 0.0:
        # the two-step map needs lambda1 > 0; both sides then come from the dual family
        r1 = rotation_numbers(CocycleSpec(Family.TWO_STEP, couplings.swapped(), freq, 0.0),
                              zetas, n, theta)
    else:
        r1 = rotation_numbers(base, zetas, n, theta)
    if couplings.lambda2 == 0.0:
        r2 = rotation_numbers(CocycleSpec(Family.DUAL_TWO_STEP, couplings.swapped(), freq, 0.0),
                              zetas, n, theta)
    else:
        r2 = rotation_numbers(dual, zetas, n, theta)
    out = np.abs(r1 - r2)
    return float(out[0]) if np.ndim(zeta) == 0 else out


def duality_transform(phi: FourierVector) -> FourierVector:
    """``(psi+, psi-) = (1/sqrt 2) [[1, -i], [-i, 1]] (phi+, phi-)`` coefficientwise."""
    mixed = MIX @ np.vstack([phi.plus, phi.minus])
    return FourierVector(phi.lo, mixed[0], mixed[1])


def inverse_duality_transform(psi: FourierVector) -> FourierVector:
    mixed = UNMIX @ np.vstack([psi.plus, psi.minus])
    return FourierVector(psi.lo, mixed[0], mixed[1])


# -- operators on windows ------------------------------------------------------------


def dual_walk_apply(couplings: Couplings, freq, xi: float, amps: np.ndarray,
                    lo: int) -> tuple[int, np.ndarray]:
    """Apply ``W^T_{l2,l1}`` at phase ``xi`` to sites ``lo..lo+N-1``.

    Returns ``(lo + 1, values)`` for the ``N - 2`` sites whose image is fully determined
    by the window.  The shift uses ``l2`` and the coin ``l1``.
    """
    l1, l1p = couplings.lambda1, couplings.lambda1p
    l2, l2p = couplings.lambda2, couplings.lambda2p
    a = np.asarray(amps, dtype=complex)
    n = lo + np.arange(1, len(a) - 1)
    ang = TWO_PI * (n * phi_value(freq) + xi)
    c, s = np.cos(ang), np.sin(ang)
    # transposed shift, then transposed coin
    up = l2 * a[2:, 0] + l2p * a[1:-1, 1]
    down = -l2p * a[1:-1, 0] + l2 * a[:-2, 1]
    out = np.empty((len(n), 2), dtype=complex)
    out[:, 0] = (l1 * c + 1j * l1p) * up + l1 * s * down
    out[:, 1] = -l1 * s * up + (l1 * c - 1j * l1p) * down
    return lo + 1, out


def dual_wave_residual(couplings: Couplings, freq, wave: BlochWave, window: int) -> float:
    """``max_{|n| <= window} |(W^T_{l2,l1} phi - z phi)_n|``."""
    phi = phi_value(freq)
    amps = wave.samples(phi, -window - 1, window + 1)
    _, img = dual_walk_apply(couplings, freq, wave.xi, amps, -window - 1)
    return float(np.abs(img - wave.z * amps[1:-1]).max())


def orbit_coefficients(psi: FourierVector, xi: float, q: Optional[int], lo: int,
                       hi: int) -> np.ndarray:
    """Coefficients ``psi_m``, ``m = lo..hi``, of the transformed pair.

    With ``q`` given, these are the Fourier coefficients over the orbit ``xi + j/q``:
    ``psi_m = sum_{k = m mod q} c_k exp(2 pi i (k - m) xi)``.  Without ``q`` they are the
    plain coefficients ``c_m``.
    """
    m = np.arange(lo, hi + 1)
    out = np.zeros((len(m), 2), dtype=complex)
    coeffs = np.stack([psi.plus, psi.minus], axis=1)
    if q is None:
        idx = m - psi.lo
        ok = (idx >= 0) & (idx < len(psi.plus))
        out[ok] = coeffs[idx[ok]]
        return out
    k = psi.modes
    same = (k[None, :] - m[:, None]) % q == 0
    phase = np.exp(1j * TWO_PI * (k[None, :] - m[:, None]) * xi) * same
    return phase @ coeffs


def duality_residual(couplings: Couplings, freq, theta: float, z: complex,
                     phi: FourierVector, xi: float, window: int,
                     input_tol: float = INPUT_TOL) -> float:
    """Residual of ``W_{l1,l2} psi = z psi`` on ``|m| <= window`` for the transformed wave.

    ``phi`` holds the Fourier coefficients of the dual pair; it must solve the dual
    equation at ``(xi, z)`` with Bloch exponent ``theta`` to within ``input_tol`` on the
    same window, otherwise :class:`DualityPreconditionError` is raised.
    """
    if window < 1:
        raise ValueError("window must be positive")
    if phi.norm() == 0.0:
        warnings.warn("zero input wave: residual is trivially zero", DegenerateWaveWarning,
                      stacklevel=2)
        return 0.0
    wave = BlochWave(phi, theta, complex(z), xi, freq)
    own = dual_wave_residual(couplings, freq, wave, window)
    if own > input_tol:
        raise DualityPreconditionError(own, input_tol)
    q = freq.q if isinstance(freq, Frequency) and freq.is_rational else None
    psi = duality_transform(phi)
    # one extra site each side: the walk moves amplitudes by at most one site
    amps = orbit_coefficients(psi, xi, q, -window - 1, window + 1)
    out = walk_apply(couplings, freq, theta, StateWindow(-window - 1, amps))
    img = np.array([out.at(m) for m in range(-window, window + 1)])
    return float(np.abs(img - complex(z) * amps[1:-1]).max())


# -- exact Floquet waves at rational frequency ---------------------------------------


def dual_bloch_matrix(couplings: Couplings, freq: Frequency, xi: float,
                      theta: float) -> np.ndarray:
    """``W^T_{l2,l1}`` at phase ``xi`` on one period of Bloch waves with exponent ``theta``.

    Basis: ``(n, +), (n, -)`` for ``n = 0..q-1``; ``phi_{n+q} = exp(2 pi i q theta) phi_n``.
    """
    if not freq.is_rational:
        raise ValueError("a rational frequency is required")
    q = freq.q
    twist = np.exp(1j * TWO_PI * q * theta)
    H = np.zeros((2 * q, 2 * q), dtype=complex)
    for col in range(2 * q):
        unit = np.zeros((q, 2), dtype=complex)
        unit[col // 2, col % 2] = 1.0
        ext = np.vstack([unit[-1:] / twist, unit, unit[:1] * twist])
        _, img = dual_walk_apply(couplings, freq, xi, ext, -1)
        H[:, col] = img.ravel()
    return H


def floquet_wave(couplings: Couplings, freq: Frequency, xi: float, theta: float,
                 index: int = 0) -> BlochWave:
    """Exact dual Bloch wave from the ``index``-th eigenpair of :func:`dual_bloch_matrix`.

    The orbit values ``f(xi + j/q)`` are interpolated by a trigonometric polynomial with
    modes ``-(q//2) .. q - 1 - q//2``.
    """
    q, p = freq.q, freq.p
    H = dual_bloch_matrix(couplings, freq, xi, theta)
    w, V = np.linalg.eig(H)
    order = np.argsort(np.angle(w) % TWO_PI)
    z, v = w[order[index]], V[:, order[index]].reshape(q, 2)
    n = np.arange(q)
    # orbit value at xi + (n p mod q)/q equals exp(-2 pi i n theta) phi_n
    vals = np.zeros((q, 2), dtype=complex)
    vals[(n * p) % q] = np.exp(-1j * TWO_PI * n * theta)[:, None] * v
    modes = np.arange(q) - q // 2
    x = xi + np.arange(q) / q
    E = np.exp(1j * TWO_PI * np.outer(x, modes))
    coeffs = np.linalg.solve(E, vals)
    base = FourierVector(int(modes[0]), coeffs[:, 0], coeffs[:, 1])
    return BlochWave(base, theta, complex(z), xi, freq)


# -- Wronskian -------------------------------------------------------------------


@dataclass(frozen=True)
class SolutionSamples:
    """Values ``u_k`` of a generalized eigenvector on CMV indices ``lo .. lo+len-1``.

    Stored as ``values * exp(log_scale)`` with one scale per transfer state
    ``(u_{2n+1}, u_{2n})`` so exponentially growing solutions stay representable.
    """

    lo: int
    values: np.ndarray
    log_scale: Optional[np.ndarray] = None

    def _index(self, k: int) -> int:
        i = k - self.lo
        if not 0 <= i < len(self.values):
            raise IndexError(f"index {k} outside the sampled range")
        return i

    def _scale(self, i: int) -> float:
        return 0.0 if self.log_scale is None else float(self.log_scale[i // 2])

    def at(self, k: int) -> complex:
        i = self._index(k)
        return complex(self.values[i]) * math.exp(self._scale(i))

    def scaled_state(self, n: int) -> tuple[np.ndarray, float]:
        """``(u_{2n+1}, u_{2n})`` as ``(vector, log factor)``."""
        i1, i0 = self._index(2 * n + 1), self._index(2 * n)
        if i1 // 2 != i0 // 2:
            raise ValueError("samples must start at an even CMV index")
        return np.array([self.values[i1], self.values[i0]]), self._scale(i0)

    def state(self, n: int) -> np.ndarray:
        v, ls = self.scaled_state(n)
        return v * math.exp(ls)


def transfer_solution(couplings: Couplings, freq, theta: float, z: complex, initial,
                      steps: int) -> SolutionSamples:
    """Propagate ``(u_1, u_0) = initial`` by transfer matrices to ``|n| <= steps``."""
    cur = np.asarray(initial, dtype=complex)
    fwd, fwd_ls = [cur], [0.0]
    ls = 0.0
    for n in range(1, steps + 1):
        cur = eigen_transfer(couplings, freq, theta, n, z) @ cur
        cur, ls = _renormalized(cur, ls)
        fwd.append(cur)
        fwd_ls.append(ls)
    back, back_ls = [], []
    cur, ls = fwd[0], 0.0
    for n in range(0, -steps, -1):
        cur = np.linalg.solve(eigen_transfer(couplings, freq, theta, n, z), cur)
        cur, ls = _renormalized(cur, ls)
        back.append(cur)
        back_ls.append(ls)
    states = back[::-1] + fwd  # states for n = -steps .. steps
    values = np.empty(2 * len(states), dtype=complex)
    values[0::2] = [st[1] for st in states]
    values[1::2] = [st[0] for st in states]
    return SolutionSamples(-2 * steps, values, np.array(back_ls[::-1] + fwd_ls))


def _renormalized(vec: np.ndarray, log_scale: float) -> tuple[np.ndarray, float]:
    size = float(np.linalg.norm(vec))
    if size > 1e50 or 0.0 < size < 1e-50:
        return vec / size, log_scale + math.log(size)
    return vec, log_scale


def wronskian(u: SolutionSamples, v: SolutionSamples, n: int) -> complex:
    """``det [[u_{2n+1}, u_{2n}], [v_{2n+1}, v_{2n}]]``.

    Rounding error is relative to ``|u_n| |v_n|``, which grows exponentially off the
    spectrum; where the result exceeds the double range it is returned as ``inf``.
    See :func:`wronskian_drift` and :func:`exact_wronskian_drift` for drift checks.
    """
    (a, la), (b, lb) = u.scaled_state(n), v.scaled_state(n)
    det = complex(a[0] * b[1] - a[1] * b[0])
    if det == 0:
        return 0j
    log_size = math.log(abs(det)) + la + lb
    if log_size > 709.0:
        return complex(math.inf, 0.0)
    return det / abs(det) * math.exp(log_size)


def wronskian_drift(u: SolutionSamples, v: SolutionSamples, n_range) -> float:
    """Largest deviation of the Wronskian from its reference value, relative to ``|u| |v|``.

    The normalization by the state norms at each ``n`` is what rounding permits when the
    solutions grow exponentially; it is computed from the scaled states, so it stays
    finite however large the solutions become.
    """
    ns = list(n_range)
    # reference where the states are smallest, so its value is itself well resolved
    ref = min(ns, key=lambda k: u.scaled_state(k)[1] + v.scaled_state(k)[1]
              + math.log(max(np.linalg.norm(u.scaled_state(k)[0])
                             * np.linalg.norm(v.scaled_state(k)[0]), 1e-300)))
    w0 = wronskian(u, v, ref)
    worst = 0.0
    for n in ns:
        (a, la), (b, lb) = u.scaled_state(n), v.scaled_state(n)
        det = complex(a[0] * b[1] - a[1] * b[0])
        size = float(np.linalg.norm(a) * np.linalg.norm(b))
        # both terms divided by exp(la + lb) * max(|u| |v|, |w0|)
        log_denom = la + lb + math.log(max(size, 1e-300))
        log_w0 = math.log(abs(w0)) if w0 != 0 else -math.inf
        if log_w0 > log_denom:
            log_denom = log_w0
        rel = abs(det * math.exp(la + lb - log_denom) - w0 * math.exp(-log_denom))
        if not math.isfinite(rel):
            return math.nan
        worst = max(worst, rel)
    return worst


def exact_wronskian_drift(couplings: Couplings, freq, theta: float, z: complex, u0, v0,
                          steps: int, digits: Optional[int] = None) -> float:
    """Absolute Wronskian drift ``max_{|n| <= steps} |W(n) - W(0)|`` in extended precision.

    The transfer matrices are generated in double precision and multiplied with enough
    working digits to hold the full dynamic range of the solutions, so the result
    measures only ``prod det A_n - 1`` and not the rounding of huge products.
    ``digits`` defaults to a value derived from a double-precision growth estimate.
    """
    import mpmath

    mats = {n: eigen_transfer(couplings, freq, theta, n, z) for n in range(-steps + 1, steps + 1)}
    if digits is None:
        growth = sum(math.log10(max(np.linalg.norm(m, 2), 1.0)) for m in mats.values())
        digits = 30 + int(math.ceil(2.0 * growth))
    with mpmath.workdps(digits):
        def mp(m):
            return mpmath.matrix([[mpmath.mpc(complex(x)) for x in row] for row in m])

        start = mpmath.matrix([[mpmath.mpc(complex(u0[0])), mpmath.mpc(complex(v0[0]))],
                               [mpmath.mpc(complex(u0[1])), mpmath.mpc(complex(v0[1]))]])
        w0 = mpmath.det(start)
        worst = mpmath.mpf(0)
        cur = start
        for n in range(1, steps + 1):
            cur = mp(mats[n]) * cur
            worst = max(worst, abs(mpmath.det(cur) - w0))
        cur = start
        for n in range(0, -steps, -1):
            cur = mpmath.inverse(mp(mats[n])) * cur
            worst = max(worst, abs(mpmath.det(cur) - w0))
        return float(worst)
