"""SU(1,1) transfer cocycles of the UAMO, Lyapunov exponents and rotation numbers.

Spectral parameters on the unit circle are passed as angles ``zeta`` with
``z = exp(i zeta)``.  Phases ``theta`` are points of R/Z (period 1).
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import (TWO_PI, Couplings, FreqLike, VerblunskyPair, phi_value,
                    verblunsky_gauged)


class SingularCocycleError(ValueError):
    """A transfer matrix is undefined (some rho vanishes)."""


class Family(enum.Enum):
    TWO_STEP = "two_step"
    DUAL_TWO_STEP = "dual_two_step"
    EIGEN_TRANSFER = "eigen_transfer"


# M^{-1} SU(1,1) M = SL(2,R)
CAYLEY = np.array([[1.0, -1.0j], [1.0, 1.0j]]) / (1.0 + 1.0j)
CAYLEY_INV = np.linalg.inv(CAYLEY)
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class SU11Matrix:
    """``[[a, b], [conj(b), conj(a)]]``."""

    a: complex
    b: complex

    @classmethod
    def identity(cls) -> "SU11Matrix":
        return cls(1.0 + 0j, 0j)

    @classmethod
    def from_array(cls, m, tol: float = 1e-10) -> "SU11Matrix":
        m = np.asarray(m, dtype=complex)
        scale = max(1.0, float(np.abs(m).max()))
        if (abs(m[1, 0] - np.conj(m[0, 1])) > tol * scale
                or abs(m[1, 1] - np.conj(m[0, 0])) > tol * scale):
            raise ValueError("matrix is not of the form [[a, b], [b*, a*]]")
        return cls(complex(m[0, 0]), complex(m[0, 1]))

    def to_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.b.conjugate(), self.a.conjugate()]])

    def __matmul__(self, other: "SU11Matrix") -> "SU11Matrix":
        a = self.a * other.a + self.b * other.b.conjugate()
        b = self.a * other.b + self.b * other.a.conjugate()
        return SU11Matrix(a, b)

    def __neg__(self) -> "SU11Matrix":
        return SU11Matrix(-self.a, -self.b)

    def inverse(self) -> "SU11Matrix":
        return SU11Matrix(self.a.conjugate(), -self.b)

    @property
    def trace(self) -> float:
        return 2.0 * self.a.real

    def norm(self) -> float:
        return abs(self.a) + abs(self.b)

    def membership_defect(self) -> float:
        return abs(abs(self.a) ** 2 - abs(self.b) ** 2 - 1.0)


@dataclass(frozen=True)
class CocycleSpec:
    family: Family
    couplings: Couplings
    freq: FreqLike
    zeta: float

    @property
    def z(self) -> complex:
        return cmath.exp(1j * self.zeta)

    @property
    def phi(self) -> float:
        return phi_value(self.freq)


@dataclass(frozen=True)
class OrbitStats:
    steps: int
    log_norm_sum: float
    angle_winding: float = math.nan


class LyapunovEstimate(NamedTuple):
    value: float
    spread: float


class HyperbolicityResult(NamedTuple):
    uniformly_hyperbolic: bool
    min_slope: float
    slopes: np.ndarray


class SubcriticalityResult(NamedTuple):
    subcritical: bool
    rates: list


def _sqrt_z(z: complex) -> complex:
    # principal branch with arg(z) taken in [0, 2 pi)
    arg = cmath.phase(z) % TWO_PI
    return cmath.rect(math.sqrt(abs(z)), arg / 2.0)


def _real_rho(pair: VerblunskyPair) -> float:
    rho = complex(pair.rho)
    if abs(rho.imag) > 1e-14 or rho.real < 0:
        raise ValueError(f"rho={rho!r} is not gauged (real, nonnegative)")
    if rho.real == 0.0:
        raise SingularCocycleError("rho = 0: Szego step undefined")
    return rho.real


def szego_step(pair: VerblunskyPair, z: complex) -> SU11Matrix:
    """Normalized Szego matrix ``z^{-1/2}/rho [[z, -conj(alpha)], [-alpha z, 1]]``."""
    rho = _real_rho(pair)
    h = _sqrt_z(z)
    return SU11Matrix(h / rho, -complex(pair.alpha).conjugate() / (h * rho))


def _two_step_entries(l1: float, l2: float, z, theta):
    """Entries (m11, m12, m21, m22) of the two-step map; ``theta`` may be complex."""
    l1p = math.sqrt(max(0.0, 1.0 - l1 * l1))
    s = np.sin(TWO_PI * np.asarray(theta))
    den2 = 1.0 - (l2 * s) ** 2
    if np.iscomplexobj(den2):
        r = np.sqrt(den2)
    else:
        r = np.sqrt(np.maximum(den2, 0.0))
    norm = l1 * r
    zi = 1.0 / z
    return ((z + l1p * l2 * s) / norm, (-l1p * zi - l2 * s) / norm,
            (-l1p * z - l2 * s) / norm, (zi + l1p * l2 * s) / norm)


def _check_two_step(l1: float, l2: float, theta: float):
    if l1 == 0.0:
        raise SingularCocycleError("lambda1 = 0: two-step map undefined")
    if 1.0 - (l2 * math.sin(TWO_PI * theta)) ** 2 <= 0.0:
        raise SingularCocycleError(f"vanishing denominator at theta={theta!r}")


def two_step_map(couplings: Couplings, z: complex, theta: float) -> SU11Matrix:
    """Combined Szego map ``S_{2n} S_{2n-1}`` at phase ``theta`` (branch free)."""
    l1, l2 = couplings.lambda1, couplings.lambda2
    _check_two_step(l1, l2, theta)
    m11, m12, _, _ = _two_step_entries(l1, l2, complex(z), theta)
    return SU11Matrix(complex(m11), complex(m12))


def dual_two_step_map(couplings: Couplings, z: complex, theta: float) -> SU11Matrix:
    """Reduced Szego map of the Aubry dual: the two-step map with couplings exchanged."""
    return two_step_map(couplings.swapped(), z, theta)


def eigen_transfer(couplings: Couplings, freq: FreqLike, theta: float, n: int,
                   z: complex) -> np.ndarray:
    """Transfer matrix ``(u_{2n-1}, u_{2n-2}) -> (u_{2n+1}, u_{2n})`` for ``E u = z u``."""
    if z == 0:
        raise ValueError("z must be nonzero")
    p = {j: verblunsky_gauged(couplings, freq, theta, j) for j in (2 * n - 2, 2 * n - 1, 2 * n)}
    a0, a1, a2 = (complex(p[j].alpha) for j in (2 * n - 2, 2 * n - 1, 2 * n))
    r0, r1, r2 = (complex(p[j].rho) for j in (2 * n - 2, 2 * n - 1, 2 * n))
    if r1 == 0 or r2 == 0:
        raise SingularCocycleError(f"rho vanishes at step {n}")
    c = np.conj
    m = np.array([
        [1 / z + a2 * c(a1) + a1 * c(a0) + a2 * c(a0) * z, -c(r0) * a1 - c(r0) * a2 * z],
        [-r2 * c(a1) - r2 * c(a0) * z, r2 * c(r0) * z],
    ])
    return m / (r2 * r1)


def r_matrix(pair: VerblunskyPair) -> np.ndarray:
    return np.array([[1.0, 0.0], [-complex(pair.alpha).conjugate(), pair.rho]], dtype=complex)


def conjugation_residual(couplings: Couplings, freq: FreqLike, theta: float, n: int,
                         z: complex) -> float:
    """``min_sign ||A_{n,z} - R_{2n}^{-1} J (sign S_{2n} S_{2n-1}) J R_{2n-2}||``."""
    pair = lambda j: verblunsky_gauged(couplings, freq, theta, j)
    A = eigen_transfer(couplings, freq, theta, n, z)
    S = (szego_step(pair(2 * n), z) @ szego_step(pair(2 * n - 1), z)).to_array()
    Rl = np.linalg.inv(r_matrix(pair(2 * n)))
    Rr = r_matrix(pair(2 * n - 2))
    rhs = Rl @ SWAP @ S @ SWAP @ Rr
    return min(float(np.linalg.norm(A - sign * rhs, 2)) for sign in (1.0, -1.0))


def to_sl2r(m, tol: float = 1e-10) -> np.ndarray:
    """Real picture ``M^{-1} m M`` of an SU(1,1) matrix."""
    if isinstance(m, SU11Matrix):
        su = m
    else:
        su = SU11Matrix.from_array(m, tol)
    if su.membership_defect() > tol * max(1.0, abs(su.a) ** 2):
        raise ValueError("matrix is not in SU(1,1)")
    out = CAYLEY_INV @ su.to_array() @ CAYLEY
    if np.abs(out.imag).max() > tol * max(1.0, np.abs(out).max()):
        raise ValueError("conjugated matrix is not real")
    return out.real


# -- iteration -----------------------------------------------------------------


def _step_couplings(spec: CocycleSpec) -> tuple[float, float]:
    c = spec.couplings
    if spec.family is Family.DUAL_TWO_STEP:
        return c.lambda2, c.lambda1
    return c.lambda1, c.lambda2


def cocycle_step(spec: CocycleSpec, theta) -> np.ndarray:
    """One cocycle matrix at phase ``theta`` (complex phases allowed for the Szego families)."""
    if spec.family is Family.EIGEN_TRANSFER:
        return eigen_transfer(spec.couplings, spec.freq, float(np.real(theta)), 0, spec.z)
    l1, l2 = _step_couplings(spec)
    if np.isrealobj(theta):
        _check_two_step(l1, l2, float(theta))
    elif l1 == 0.0:
        raise SingularCocycleError("coupling in the denominator vanishes")
    m11, m12, m21, m22 = _two_step_entries(l1, l2, spec.z, theta)
    return np.array([[m11, m12], [m21, m22]], dtype=complex)


def _opnorm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def cocycle_product(spec: CocycleSpec, theta, n: int) -> tuple[np.ndarray, OrbitStats]:
    """Iterate ``A^n(theta)`` with renormalization after every step.

    Returns the product scaled to unit operator norm and the accumulated log scale, so
    that ``log||A^n(theta)|| = stats.log_norm_sum`` (the returned matrix has norm 1).
    Negative ``n`` gives ``[A^{|n|}(theta + n Phi)]^{-1}``.
    """
    phi = spec.phi
    P = np.eye(2, dtype=complex)
    log_sum = 0.0
    steps = range(abs(n))
    for k in steps:
        if n > 0:
            th = theta + k * phi
            try:
                A = cocycle_step(spec, th)
            except SingularCocycleError as exc:
                raise SingularCocycleError(f"step {k}: {exc}") from exc
            P = A @ P
        else:
            th = theta - (k + 1) * phi
            try:
                A = cocycle_step(spec, th)
            except SingularCocycleError as exc:
                raise SingularCocycleError(f"step {-k - 1}: {exc}") from exc
            P = np.linalg.inv(A) @ P
        s = _opnorm(P)
        P = P / s
        log_sum += math.log(s)
    return P, OrbitStats(abs(n), log_sum)


def _szego_entries_batch(l1: float, l2: float, phi: float, thetas: np.ndarray,
                         zs: np.ndarray, k: int):
    return _two_step_entries(l1, l2, zs[None, :], thetas[:, None] + k * phi)


def log_norm_growth(spec: CocycleSpec, thetas, n: int, zetas=None,
                    checkpoints=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``log||A^k(theta)||`` over phases (rows) and spectral angles (columns).

    ``zetas`` defaults to ``[spec.zeta]``.  Returns ``(log_norm at step n, log_norm at
    each checkpoint)``; the second array has shape ``(len(checkpoints), T, Z)``.
    """
    if spec.family is Family.EIGEN_TRANSFER:
        raise NotImplementedError("vectorized growth is available for the Szego families")
    l1, l2 = _step_couplings(spec)
    if l1 == 0.0:
        raise SingularCocycleError("coupling in the denominator vanishes")
    thetas = np.atleast_1d(np.asarray(thetas))
    zetas = np.atleast_1d(np.asarray([spec.zeta] if zetas is None else zetas, dtype=float))
    zs = np.exp(1j * zetas)
    phi = spec.phi
    shape = (len(thetas), len(zs))
    p11 = np.ones(shape, complex)
    p12 = np.zeros(shape, complex)
    p21 = np.zeros(shape, complex)
    p22 = np.ones(shape, complex)
    log_sum = np.zeros(shape)
    cps = sorted(set(checkpoints or ()))
    recorded = []
    ci = 0
    l1p = math.sqrt(max(0.0, 1.0 - l1 * l1))
    zc, zi = zs[None, :], 1.0 / zs[None, :]
    for k in range(n):
        s = np.sin(TWO_PI * (thetas + k * phi))[:, None]
        den2 = 1.0 - (l2 * s) ** 2
        if np.iscomplexobj(den2):
            r = np.sqrt(den2)
        else:
            if np.any(den2 <= 0.0):
                raise SingularCocycleError(f"step {k}: vanishing denominator")
            r = np.sqrt(den2)
        inv = 1.0 / (l1 * r)
        cs = l1p * l2 * s
        a11 = (zc + cs) * inv
        a12 = (-l1p * zi - l2 * s) * inv
        a21 = (-l1p * zc - l2 * s) * inv
        a22 = (zi + cs) * inv
        p11, p12, p21, p22 = (a11 * p11 + a12 * p21, a11 * p12 + a12 * p22,
                              a21 * p11 + a22 * p21, a21 * p12 + a22 * p22)
        fro = np.sqrt(np.abs(p11) ** 2 + np.abs(p12) ** 2 + np.abs(p21) ** 2 + np.abs(p22) ** 2)
        p11, p12, p21, p22 = p11 / fro, p12 / fro, p21 / fro, p22 / fro
        log_sum += np.log(fro)
        while ci < len(cps) and cps[ci] == k + 1:
            recorded.append(log_sum + np.log(_opnorm_batch(p11, p12, p21, p22)))
            ci += 1
    final = log_sum + np.log(_opnorm_batch(p11, p12, p21, p22))
    rec = np.array(recorded) if recorded else np.zeros((0,) + shape)
    return final, rec


def _opnorm_batch(p11, p12, p21, p22) -> np.ndarray:
    fro2 = np.abs(p11) ** 2 + np.abs(p12) ** 2 + np.abs(p21) ** 2 + np.abs(p22) ** 2
    det = np.abs(p11 * p22 - p12 * p21)
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
    return np.sqrt((fro2 + disc) / 2.0)


def equidistributed_phases(count: int) -> np.ndarray:
    # offset avoids theta = 0 (an orbit through sin = 0) as the only sample
    return (np.arange(count) + 0.5) / count


def lyapunov_exponents(spec: CocycleSpec, zetas, n: int = 100_000,
                       theta_samples: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Phase-averaged Lyapunov exponents at several ``zetas``; returns ``(values, spreads)``."""
    thetas = equidistributed_phases(theta_samples)
    final, _ = log_norm_growth(spec, thetas, n, zetas=zetas)
    rates = final / n
    return np.maximum(rates.mean(axis=0), 0.0), rates.max(axis=0) - rates.min(axis=0)


def lyapunov_exponent(spec: CocycleSpec, n: int = 100_000,
                      theta_samples: int = 32) -> LyapunovEstimate:
    """Growth rate of ``||A^n||`` averaged over ``theta_samples`` phases, clamped at 0."""
    if spec.family is Family.EIGEN_TRANSFER:
        spec = CocycleSpec(Family.TWO_STEP, spec.couplings, spec.freq, spec.zeta)
    values, spreads = lyapunov_exponents(spec, [spec.zeta], n, theta_samples)
    return LyapunovEstimate(float(values[0]), float(spreads[0]))


def birkhoff_weights(n: int) -> np.ndarray:
    """Smooth bump weights ``exp(-1/(x(1-x)))`` on the midpoints of ``[0, 1]``, summing to 1.

    Weighted ergodic averages with these weights converge faster than any power of
    ``1/n`` for smooth quasi-periodic observables, so rotation-number plateaus on gaps
    are resolved to near machine precision at moderate ``n``.
    """
    x = (np.arange(n) + 0.5) / n
    w = np.exp(-1.0 / (x * (1.0 - x)))
    return w / w.sum()


def _winding(l1: float, l2: float, phi: float, theta: float, zetas: np.ndarray,
             n: int, weighted: bool) -> np.ndarray:
    """Average lifted angle per two-step iterate (radians, growing with zeta).

    Each single Szego step is ``H_alpha * diag(z^{1/2}, z^{-1/2})``; in the real picture
    the second factor rotates directions by ``-zeta/2`` (lifted exactly) and the first
    is ``diag((1-alpha)/rho, (1+alpha)/rho)``, which keeps every direction in its quadrant
    so nearest-branch continuation is exact for it.
    """
    l1p = math.sqrt(max(0.0, 1.0 - l1 * l1))
    half = zetas / 2.0
    t = np.zeros(len(zetas))
    d_even = ((1.0 - l1p) / l1, (1.0 + l1p) / l1)
    weights = birkhoff_weights(n) if weighted else np.full(n, 1.0 / n)
    acc = np.zeros(len(zetas))

    def scale(t, d1, d2):
        new = np.arctan2(d2 * np.sin(t), d1 * np.cos(t))
        return t + (new - t + math.pi) % TWO_PI - math.pi

    for k in range(n):
        s = l2 * math.sin(TWO_PI * (theta + k * phi))
        r = math.sqrt(1.0 - s * s)
        t_new = scale(scale(t - half, (1.0 - s) / r, (1.0 + s) / r) - half, *d_even)
        acc += weights[k] * (t - t_new)
        t = t_new
    return acc


def rotation_numbers(spec: CocycleSpec, zetas, n: int = 20_000, theta: float = 0.0,
                     weighted: bool = True) -> np.ndarray:
    """Fibered rotation numbers (per two-step iterate) at several spectral angles.

    Normalized so that the free walk gives ``zeta / 2 pi``; values lie in ``[0, 1]`` and
    coincide with the integrated density of states.  ``weighted=False`` returns the
    plain average ``winding / n``.
    """
    l1, l2 = _step_couplings(spec)
    if l1 == 0.0:
        raise SingularCocycleError("coupling in the denominator vanishes")
    if l2 == 1.0:
        raise SingularCocycleError("lambda = 1 in the numerator coupling: orbit may hit rho = 0")
    zetas = np.atleast_1d(np.asarray(zetas, dtype=float)) % TWO_PI
    w = _winding(l1, l2, spec.phi, float(theta), zetas, n, weighted)
    return np.clip(w / TWO_PI, 0.0, 1.0)


def rotation_number(spec: CocycleSpec, n: int = 20_000, theta: float = 0.0,
                    weighted: bool = True) -> float:
    """Fibered rotation number of the cocycle at ``spec.zeta``.

    The eigenfunction-transfer family is reported through its conjugate Szego cocycle.
    """
    if spec.family is Family.EIGEN_TRANSFER:
        spec = CocycleSpec(Family.TWO_STEP, spec.couplings, spec.freq, spec.zeta)
    return float(rotation_numbers(spec, [spec.zeta], n, theta, weighted)[0])


def hyperbolicity_probe(spec: CocycleSpec, n: int = 10_000, theta_samples: int = 16,
                        threshold: float = 1e-3, fit_points: int = 9) -> HyperbolicityResult:
    """Fit ``log||A^k||`` against ``k`` on ``[n/2, n]`` for each sampled phase.

    Uniform hyperbolicity is declared when every fitted slope exceeds ``threshold`` and
    the smallest norm over phases grows between ``n/2`` and ``n``.
    """
    if spec.family is Family.EIGEN_TRANSFER:
        spec = CocycleSpec(Family.TWO_STEP, spec.couplings, spec.freq, spec.zeta)
    ks = np.unique(np.linspace(n // 2, n, fit_points).astype(int))
    thetas = equidistributed_phases(theta_samples)
    _, rec = log_norm_growth(spec, thetas, n, checkpoints=ks.tolist())
    logs = rec[:, :, 0]
    slopes = np.polyfit(ks.astype(float), logs, 1)[0]
    grows = logs[-1].min() > logs[0].min()
    min_slope = float(slopes.min())
    return HyperbolicityResult(bool(min_slope > threshold and grows), min_slope, slopes)


def critical_strip_width(l2: float) -> float:
    """Smallest ``|y|`` where ``1 - l2^2 sin^2(2 pi (theta + i y))`` vanishes for some theta."""
    if l2 == 0.0:
        return math.inf
    return math.acosh(1.0 / l2) / TWO_PI


def subcriticality_probe(spec: CocycleSpec, strip_eps: float, n: int = 20_000,
                         theta_samples: int = 8, y_points: int = 5,
                         threshold: float = 1e-3) -> SubcriticalityResult:
    """Growth rates at complexified phases ``theta + i y`` for ``|y| < strip_eps``."""
    if spec.family is Family.EIGEN_TRANSFER:
        spec = CocycleSpec(Family.TWO_STEP, spec.couplings, spec.freq, spec.zeta)
    _, l2 = _step_couplings(spec)
    y_crit = critical_strip_width(l2)
    if strip_eps >= y_crit:
        raise ValueError(f"strip_eps={strip_eps} reaches a singular phase at |y|={y_crit:.6g}")
    ys = strip_eps * np.linspace(-1.0, 1.0, y_points + 2)[1:-1]
    base = equidistributed_phases(theta_samples)
    rates = []
    for y in ys:
        final, _ = log_norm_growth(spec, base + 1j * y, n)
        rates.append((float(y), float(max(final.mean() / n, 0.0))))
    return SubcriticalityResult(all(r < threshold for _, r in rates), rates)
