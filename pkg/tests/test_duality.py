import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uamo.cocycle import CocycleSpec, Family, rotation_numbers
from uamo.duality import (DegenerateWaveWarning, DualityPreconditionError, BlochWave,
                          FourierVector, dual_params, dual_wave_residual, duality_residual,
                          duality_transform, exact_wronskian_drift, floquet_wave,
                          inverse_duality_transform, isospectrality_check,
                          rotation_match_check, transfer_solution, wronskian, wronskian_drift)
from uamo.model import Couplings, Frequency
from uamo.spectrum import band_arcs, gaps

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SUPER = Couplings(0.6, 0.8)
SUB = Couplings(0.8, 0.6)
CRIT = Couplings(0.7, 0.7)

coeffs = st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                  min_size=1, max_size=8)


# -- parameter swap and isospectrality -------------------------------------------------

def test_dual_params_examples():
    assert dual_params(SUPER) == SUB
    assert dual_params(dual_params(Couplings(0.3, 0.9))) == Couplings(0.3, 0.9)
    assert dual_params(CRIT) == CRIT
    assert dual_params(Couplings(0.7, 0.7 + 1e-12)) != Couplings(0.7, 0.7 + 1e-12)


def test_isospectrality_examples():
    assert isospectrality_check(SUPER, Frequency.rational(2, 5)) < 1e-8
    assert isospectrality_check(CRIT, Frequency.rational(3, 7)) == 0.0
    assert isospectrality_check(Couplings(0.6, 0.0), Frequency.rational(2, 5)) < 1e-10


@pytest.mark.parametrize("pq", [(1, 2), (3, 7), (5, 12), (8, 19)])
def test_isospectrality_other_couplings(pq):
    assert isospectrality_check(Couplings(1 / math.sqrt(2), 1 / math.sqrt(3)),
                                Frequency.rational(*pq)) < 1e-8


# -- rotation matching -----------------------------------------------------------------

@pytest.mark.parametrize("couplings", [SUPER, SUB, CRIT])
def test_rotation_match_golden(couplings, rng):
    zetas = rng.uniform(0, 2 * math.pi, 16)
    assert rotation_match_check(couplings, GOLDEN, zetas).max() < 1e-3


def test_rotation_match_constant_coupling(rng):
    zetas = rng.uniform(0, 2 * math.pi, 16)
    assert rotation_match_check(Couplings(0.6, 0.0), GOLDEN, zetas).max() < 1e-4
    assert rotation_match_check(Couplings(0.0, 0.6), GOLDEN, zetas).max() < 1e-4


def test_rotation_match_scalar_and_minimum_n():
    assert isinstance(rotation_match_check(SUPER, GOLDEN, 1.0), float)
    with pytest.raises(ValueError):
        rotation_match_check(SUPER, GOLDEN, 1.0, n=5000)


def test_rotation_plateau_in_gap_agrees():
    # inside a wide gap of a nearby approximant both families sit on the same plateau
    g = max(gaps(band_arcs(SUPER, Frequency.rational(13, 21))), key=lambda x: x.width)
    zetas = [g.arc.lo + 0.4 * g.width, g.arc.lo + 0.6 * g.width]
    r1 = rotation_numbers(CocycleSpec(Family.TWO_STEP, SUPER, GOLDEN, 0.0), zetas, 20_000)
    r2 = rotation_numbers(CocycleSpec(Family.DUAL_TWO_STEP, SUPER, GOLDEN, 0.0), zetas, 20_000)
    assert abs(r1[0] - r1[1]) < 1e-6 and np.abs(r1 - r2).max() < 1e-6


# -- the transform ---------------------------------------------------------------------

def test_transform_of_constant():
    psi = duality_transform(FourierVector(0, [1.0], [0.0]))
    assert psi.coeffs_plus == {0: pytest.approx(1 / math.sqrt(2))}
    assert psi.coeffs_minus == {0: pytest.approx(-1j / math.sqrt(2))}


@given(coeffs, coeffs, st.integers(-5, 5))
def test_transform_unitary_invertible_and_shift_covariant(plus, minus, lo):
    n = min(len(plus), len(minus))
    phi = FourierVector(lo, plus[:n], minus[:n])
    psi = duality_transform(phi)
    assert psi.norm() == pytest.approx(phi.norm(), rel=1e-15, abs=1e-300)
    back = inverse_duality_transform(psi)
    np.testing.assert_allclose(back.plus, phi.plus, atol=1e-15 * max(1, phi.norm()))
    np.testing.assert_allclose(back.minus, phi.minus, atol=1e-15 * max(1, phi.norm()))
    a, b = duality_transform(phi.shifted(3)), psi.shifted(3)
    assert a.lo == b.lo
    np.testing.assert_array_equal(a.plus, b.plus)
    np.testing.assert_array_equal(a.minus, b.minus)


def test_fourier_vector_evaluation_is_exact_sum():
    phi = FourierVector.from_maps({-1: 0.5, 2: 1j}, {0: 2.0})
    x = 0.3
    expect_plus = 0.5 * cmath.exp(-2j * math.pi * x) + 1j * cmath.exp(4j * math.pi * x)
    np.testing.assert_allclose(phi(x)[0], [expect_plus, 2.0], atol=1e-15)


# -- duality residual ------------------------------------------------------------------

def _constant_coupling_wave(l1: float, xi: float):
    """Closed-form wave of the dual at lambda2 = 0 and Phi = 1/3.

    The dual is then site-local, with 2x2 block ``[[-l1 s, l1 c + i l1'],
    [-l1 c + i l1', -l1 s]]`` at ``x = xi + n Phi``.  Its eigenvector at ``x = xi``,
    placed on one point of the orbit by the Dirichlet kernel, is an exact Bloch wave.
    """
    l1p = math.sqrt(1 - l1 * l1)
    c, s = math.cos(2 * math.pi * xi), math.sin(2 * math.pi * xi)
    r = math.sqrt((l1 * c) ** 2 + l1p ** 2)
    z = -l1 * s + 1j * r
    v = np.array([l1 * c + 1j * l1p, 1j * r])
    m = np.arange(-1, 2)
    co = np.exp(-2j * math.pi * m * xi)[:, None] * v[None, :] / 3
    return z, FourierVector(-1, co[:, 0], co[:, 1])


@pytest.mark.parametrize("theta", [0.0, 0.3])
def test_residual_constant_coupling_closed_form(theta):
    c, f, xi = Couplings(0.6, 0.0), Frequency.rational(1, 3), 0.17
    z, phi = _constant_coupling_wave(0.6, xi)
    assert abs(z) == pytest.approx(1.0)
    assert duality_residual(c, f, theta, z, phi, xi, 20) < 1e-10


@pytest.mark.parametrize("pq", [(1, 3), (2, 5)])
@pytest.mark.parametrize("couplings", [SUPER, SUB, CRIT])
def test_residual_floquet_waves(couplings, pq):
    f = Frequency.rational(*pq)
    for xi, theta in [(0.0, 0.0), (0.13, 0.21), (0.37, 0.05)]:
        for k in range(2 * pq[1]):
            w = floquet_wave(couplings, f, xi, theta, k)
            own = dual_wave_residual(couplings, f, w, 30)
            res = duality_residual(couplings, f, theta, w.z, w.base, xi, 30)
            assert res < 1e-8
            assert res <= 10 * own


def test_residual_of_perturbed_wave_not_amplified(rng):
    # a wave off by 1e-11 in its coefficients: the transform keeps the error that size
    f = Frequency.rational(2, 5)
    for k in range(10):
        w = floquet_wave(SUPER, f, 0.13, 0.21, k)
        noise = 1e-11 * (rng.normal(size=(2, len(w.base.plus)))
                         + 1j * rng.normal(size=(2, len(w.base.plus))))
        phi = FourierVector(w.base.lo, w.base.plus + noise[0], w.base.minus + noise[1])
        own = dual_wave_residual(SUPER, f, BlochWave(phi, 0.21, w.z, 0.13, f), 30)
        assert own > 1e-13
        assert duality_residual(SUPER, f, 0.21, w.z, phi, 0.13, 30) <= 10 * own


def test_residual_zero_input_flagged():
    with pytest.warns(DegenerateWaveWarning):
        r = duality_residual(SUPER, Frequency.rational(1, 3), 0.1, 1.0,
                             FourierVector(0, [0.0], [0.0]), 0.0, 10)
    assert r == 0.0


def test_residual_rejects_non_solution():
    w = floquet_wave(SUPER, Frequency.rational(1, 3), 0.0, 0.0, 0)
    with pytest.raises(DualityPreconditionError) as err:
        duality_residual(SUPER, Frequency.rational(1, 3), 0.0, w.z * cmath.exp(0.01j),
                         w.base, 0.0, 10)
    assert err.value.residual > 1e-9
    with pytest.raises(ValueError):
        duality_residual(SUPER, Frequency.rational(1, 3), 0.0, w.z, w.base, 0.0, 0)


# -- Wronskian -------------------------------------------------------------------------

def test_wronskian_of_solution_with_itself():
    u = transfer_solution(SUPER, GOLDEN, 0.2, cmath.exp(1.3j), [1.0, 0.5j], 50)
    assert all(wronskian(u, u, n) == 0 for n in range(-50, 51))


def test_wronskian_free_walk_constant():
    # alpha = 0, rho = 1: the transfer matrix is diag(1/z, z)
    c = Couplings(1.0, 0.0)
    z = cmath.exp(0.4j)
    u = transfer_solution(c, GOLDEN, 0.0, z, [1.0, 2.0], 1000)
    v = transfer_solution(c, GOLDEN, 0.0, z, [0.5j, -1.0], 1000)
    w0 = 1.0 * -1.0 - 2.0 * 0.5j
    assert max(abs(wronskian(u, v, n) - w0) for n in range(-1000, 1001)) < 1e-12


@pytest.mark.parametrize("couplings,zeta", [(SUPER, 1.3), (SUB, 0.2), (CRIT, 2.5)])
def test_wronskian_drift_relative(couplings, zeta):
    z = cmath.exp(1j * zeta)
    u = transfer_solution(couplings, GOLDEN, 0.2, z, [1.0, 0.0], 1000)
    v = transfer_solution(couplings, GOLDEN, 0.2, z, [0.3, 1j], 1000)
    assert wronskian_drift(u, v, range(-1000, 1001)) < 1e-9


@pytest.mark.parametrize("couplings,zeta", [(SUPER, 1.3), (SUB, 0.2)])
def test_wronskian_drift_absolute_extended_precision(couplings, zeta):
    drift = exact_wronskian_drift(couplings, GOLDEN, 0.2, cmath.exp(1j * zeta),
                                  [1.0, 0.0], [0.3, 1j], 1000)
    assert drift < 1e-9


def test_wronskian_overflow_is_inf_not_error():
    u = transfer_solution(SUPER, GOLDEN, 0.2, cmath.exp(1.3j), [1.0, 0.0], 1000)
    v = transfer_solution(SUPER, GOLDEN, 0.2, cmath.exp(1.3j), [0.0, 1.0], 1000)
    assert math.isinf(abs(wronskian(u, v, 1000)))
