import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uamo.cocycle import two_step_map
from uamo.model import Couplings, Frequency
from uamo.spectrum import (Arc, BandStructure, butterfly, complement_arcs, edge_angle_errors,
                           gap_labels, gaps, hausdorff_distance, merge_arcs, monodromy_trace,
                           monodromy_traces, reduced_fractions, spectrum_approx, symmetry_check,
                           band_arcs)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ORACLE = json.loads((Path(__file__).parent / "oracles" / "dense_ids.json").read_text())
SUPER = Couplings(0.6, 0.8)


def euler_phi(n):
    return sum(1 for k in range(1, n + 1) if math.gcd(k, n) == 1)


# -- arcs ----------------------------------------------------------------------------

def test_arc_canonical_and_merge():
    a = Arc.between(7.0, 7.5)
    with pytest.raises(ValueError):
        Arc(7.0, 7.5)
    assert 0 <= a.lo < 2 * math.pi and a.length == pytest.approx(0.5)
    merged = merge_arcs([Arc(0.1, 0.3), Arc(0.3 + 1e-10, 0.5), Arc(1.0, 1.2)])
    assert len(merged) == 2 and merged[0].hi == pytest.approx(0.5)
    comp = complement_arcs([Arc(0.1, 0.3), Arc(1.0, 1.2)])
    assert sum(g.length for g in comp) == pytest.approx(2 * math.pi - 0.4)


@given(st.floats(0.0, 1.0))
def test_hausdorff_of_rotated_set(delta):
    arcs = [Arc(0.5, 1.0), Arc(3.0, 3.4)]
    moved = [Arc.between(a.lo + delta, a.hi + delta) for a in arcs]
    assert hausdorff_distance(arcs, moved) == pytest.approx(delta, abs=1e-12)


# -- monodromy traces ----------------------------------------------------------------

@pytest.mark.parametrize("lam2", [0.0, 0.5, 0.9])
def test_trace_q1_theta0(lam2):
    c = Couplings(0.6, lam2)
    for zeta in (0.3, 1.7, 4.0):
        assert monodromy_trace(c, Frequency.rational(0, 1), 0.0, zeta) == \
            pytest.approx(2 * math.cos(zeta) / 0.6, abs=1e-13)


def test_trace_constant_power():
    c, zeta = Couplings(0.6, 0.0), 1.1
    m = two_step_map(c, np.exp(1j * zeta), 0.0).to_array()
    for q in (2, 3, 5):
        ref = np.trace(np.linalg.matrix_power(m, q)).real
        assert monodromy_trace(c, Frequency.rational(1, q), 0.3, zeta) == \
            pytest.approx(ref, rel=1e-12)


def test_trace_is_real(rng):
    for _ in range(1000):
        c = Couplings(rng.uniform(0.05, 1), rng.uniform(0, 0.99))
        f = Frequency.rational(int(rng.integers(1, 7)), 7)
        theta, zeta = rng.uniform(), rng.uniform(0, 2 * math.pi)
        prod = np.eye(2, dtype=complex)
        for j in range(f.q):
            prod = two_step_map(c, np.exp(1j * zeta), theta + j * f.value).to_array() @ prod
        tr = np.trace(prod)
        assert abs(tr.imag) < 1e-12 * max(1.0, abs(tr))
        assert monodromy_trace(c, f, theta, zeta) == pytest.approx(tr.real, rel=1e-10, abs=1e-10)


# -- band structures -----------------------------------------------------------------

def test_bands_closed_form_lambda2_zero():
    bs = band_arcs(Couplings(0.6, 0.0), Frequency.rational(2, 5))
    a = math.acos(0.6)
    expect = [(a, math.pi - a), (math.pi + a, 2 * math.pi - a)]
    got = sorted((x.lo, x.hi) for x in bs.arcs)
    np.testing.assert_allclose(np.array(got), np.array(expect), atol=1e-10)
    np.testing.assert_allclose([got[0][0], got[0][1], got[1][0], got[1][1]],
                               [0.9273, 2.2143, 4.0689, 5.3559], atol=5e-5)


def test_bands_half_has_four():
    bs = band_arcs(Couplings(1 / math.sqrt(2), 1 / math.sqrt(3)), Frequency.rational(1, 2))
    assert bs.count == 4 == bs.expected_count


@pytest.mark.parametrize("pq", [(3, 5), (21, 34)])
def test_critical_measure_below_noncritical(pq):
    f = Frequency.rational(*pq)
    crit = band_arcs(Couplings(0.7, 0.7), f).measure
    assert crit < band_arcs(Couplings(0.6, 0.8), f).measure
    assert crit < band_arcs(Couplings(0.8, 0.6), f).measure


def test_band_count_all_q_up_to_20():
    for p, q in reduced_fractions(20):
        assert band_arcs(SUPER, Frequency.rational(p, q)).count == 2 * q, (p, q)


def test_bands_sorted_disjoint():
    bs = band_arcs(SUPER, Frequency.rational(5, 13))
    arcs = list(bs.arcs)
    assert [a.lo for a in arcs] == sorted(a.lo for a in arcs)
    for a, b in zip(arcs, arcs[1:]):
        assert a.hi <= b.lo + 1e-12


@pytest.mark.parametrize("pq", [(1, 2), (2, 5), (3, 8), (5, 13)])
def test_edges_hit_trace_level_absolutely(pq):
    f = Frequency.rational(*pq)
    bs = band_arcs(SUPER, f)
    th_lo, th_hi = bs.extremal_phases
    for a in bs.arcs:
        for e in (a.lo, a.hi):
            r = min(abs(abs(monodromy_trace(SUPER, f, t, e)) - 2) for t in (th_hi, th_lo))
            assert r < 1e-9


@pytest.mark.parametrize("couplings,pq", [(SUPER, (8, 21)), (SUPER, (13, 34)), (SUPER, (19, 40)),
                                          (Couplings(0.7, 0.7), (19, 40))])
def test_edges_hit_trace_level_in_angle(couplings, pq):
    # the trace is steep here (one ulp of zeta moves it by more than 1e-9) and touching
    # bands meet the level tangentially, so accuracy is the angular distance to the
    # exact level crossing, evaluated in extended precision
    f = Frequency.rational(*pq)
    bs = band_arcs(couplings, f)
    th_lo, th_hi = bs.extremal_phases
    edges = np.array([e for a in bs.arcs for e in (a.lo, a.hi)])
    err = np.minimum(edge_angle_errors(couplings, f, th_hi, edges, 1, precise=True),
                     edge_angle_errors(couplings, f, th_lo, edges, -1, precise=True))
    assert err.max() < 1e-9


def test_precise_edge_error_of_shifted_edge():
    # moving a simple edge by a known angle is reported as that angle
    f = Frequency.rational(2, 5)
    bs = band_arcs(SUPER, f)
    th_lo, th_hi = bs.extremal_phases
    e = bs.arcs[0].lo
    lev = 1 if abs(monodromy_trace(SUPER, f, th_hi, e) - 2) < 1e-9 else -1
    th = th_hi if lev == 1 else th_lo
    err = edge_angle_errors(SUPER, f, th, [e + 1e-6], lev, precise=True)[0]
    assert err == pytest.approx(1e-6, rel=1e-4)


def test_bands_contain_fixed_phase_spectrum():
    # oracle: eigenvalues of the dense ring walk lie inside the union of bands
    ang = np.array(ORACLE["angles"]["5/13"])
    bs = band_arcs(SUPER, Frequency.rational(5, 13))
    from uamo.spectrum import distance_to_arcs
    assert max(distance_to_arcs(z, bs.arcs) for z in ang) < 1e-12


def test_spectrum_approx_convergent():
    bs = spectrum_approx(SUPER, GOLDEN, 5)
    assert bs.convergent == (5, 8) and bs.count == 16


def test_spectrum_approx_continuity():
    d = [hausdorff_distance(spectrum_approx(SUPER, GOLDEN, k).arcs,
                            spectrum_approx(SUPER, GOLDEN, k + 1).arcs) for k in (4, 5, 6)]
    assert d[0] > d[1] > d[2]


def test_spectrum_approx_constant_case():
    c = Couplings(0.6, 0.0)
    base = spectrum_approx(c, GOLDEN, 3).arcs
    for k in (4, 6, 8):
        assert hausdorff_distance(base, spectrum_approx(c, GOLDEN, k).arcs) < 1e-14


def test_spectrum_approx_rational_input():
    bs = spectrum_approx(SUPER, Frequency.rational(2, 5), 3)
    assert "rational" in bs.note and bs.count == 10


# -- gaps and labels -----------------------------------------------------------------

def test_gaps_closed_form():
    g = gaps(band_arcs(Couplings(0.6, 0.0), Frequency.rational(1, 2)))
    assert len(g) == 2
    for x in g:
        assert x.width == pytest.approx(2 * math.acos(0.6), abs=1e-9)


def test_gaps_full_circle():
    assert gaps(band_arcs(Couplings(1.0, 0.0), Frequency.rational(1, 3))) == []


def test_gaps_circle_topology():
    g = gaps(band_arcs(Couplings(1 / math.sqrt(2), 1 / math.sqrt(3)), Frequency.rational(1, 2)))
    assert len(g) <= 4
    assert all(x.width > 1e-9 for x in g)


def test_labels_constant_cocycle():
    c, f = Couplings(0.6, 0.0), Frequency.rational(2, 5)
    for g in gap_labels(c, f, gaps(band_arcs(c, f))):
        assert g.residual < 1e-4 and not g.flagged


def test_labels_pair_under_negation():
    f = Frequency.rational(2, 5)
    labeled = gap_labels(SUPER, f, gaps(band_arcs(SUPER, f)))
    for g in labeled:
        mate = min(labeled, key=lambda h: abs(((h.arc.mid - g.arc.mid - math.pi) + math.pi)
                                              % (2 * math.pi) - math.pi))
        assert mate.width == pytest.approx(g.width, abs=1e-9)
        # ids shifts by 1/2, so 2 ids shifts by an integer and the label is kept
        assert (mate.ids - g.ids) % 1.0 == pytest.approx(0.5, abs=1e-6)
        assert mate.label == g.label


@pytest.mark.parametrize("pq", ["2/5", "3/8", "5/13"])
def test_ids_on_lattice_and_match_dense_count(pq):
    p, q = map(int, pq.split("/"))
    f = Frequency.rational(p, q)
    labeled = gap_labels(SUPER, f, [g for g in gaps(band_arcs(SUPER, f)) if g.width > 1e-4])
    angles = np.array(ORACLE["angles"][pq])
    for g in labeled:
        assert abs(g.ids * 2 * q - round(g.ids * 2 * q)) < 1e-4 * 2 * q
        mid = g.arc.mid % (2 * math.pi)
        count = np.searchsorted(angles, mid) / len(angles)
        if count == 0.0 and g.ids > 0.5:
            count = 1.0
        assert g.ids == pytest.approx(count, abs=1e-4)


def test_ids_constant_across_gap():
    from uamo.cocycle import CocycleSpec, Family, rotation_numbers
    f = Frequency.rational(3, 8)
    spec = CocycleSpec(Family.TWO_STEP, SUPER, f, 0.0)
    for g in gaps(band_arcs(SUPER, f)):
        if g.width < 1e-3:
            continue
        a = g.arc.lo + 0.3 * g.width
        b = g.arc.lo + 0.7 * g.width
        r = rotation_numbers(spec, [a, b], 20_000)
        d = abs(r[0] - r[1]) % 1.0
        assert min(d, 1.0 - d) < 1e-6  # a gap containing zeta = 0 reads 0 and 1


# -- butterfly and symmetry ----------------------------------------------------------

def test_butterfly_small():
    recs = butterfly(Couplings(1 / math.sqrt(2), 1 / math.sqrt(3)), 2, workers=1)
    assert [(r.p, r.q) for r in recs] == [(1, 2)] and recs[0].bands.count == 4


def test_butterfly_record_count_and_order():
    recs = butterfly(SUPER, 7, workers=1)
    assert len(recs) == sum(euler_phi(q) for q in range(2, 8))
    assert [(r.q, r.p) for r in recs] == sorted((r.q, r.p) for r in recs)
    assert all(r.error == "" for r in recs)


def test_butterfly_rejects_small_qmax():
    with pytest.raises(ValueError):
        butterfly(SUPER, 1)


def test_symmetry_examples():
    assert max(symmetry_check(band_arcs(Couplings(0.6, 0.0), Frequency.rational(1, 3)))) < 1e-12
    assert max(symmetry_check(band_arcs(SUPER, Frequency.rational(2, 5)))) < 1e-8


def test_symmetry_detects_rotation():
    # symmetric under both maps before rotating by 0.01
    arcs = [Arc(0.9, math.pi - 0.9), Arc(math.pi + 0.9, 2 * math.pi - 0.9)]
    base = BandStructure(tuple(arcs), Frequency.rational(1, 2), SUPER, 1)
    assert max(symmetry_check(base)) < 1e-12
    bs = BandStructure(tuple(a.mapped(1, 0.01) for a in arcs), Frequency.rational(1, 2), SUPER, 1)
    dev_conj, dev_neg = symmetry_check(bs)
    assert dev_conj == pytest.approx(0.02, abs=1e-12)
    assert dev_neg < 1e-12


@given(st.integers(2, 12).flatmap(lambda q: st.tuples(st.integers(1, q - 1), st.just(q)))
       .filter(lambda t: math.gcd(*t) == 1),
       st.floats(0.3, 0.95), st.floats(0.3, 0.95))
def test_symmetry_and_count_property(pq, l1, l2):
    bs = band_arcs(Couplings(l1, l2), Frequency.rational(*pq))
    assert max(symmetry_check(bs)) < 1e-8
    assert bs.count == 2 * pq[1]


@given(st.integers(2, 10).flatmap(lambda q: st.tuples(st.integers(1, q - 1), st.just(q)))
       .filter(lambda t: math.gcd(*t) == 1),
       st.floats(0.2, 0.95), st.floats(0.2, 0.95))
def test_dual_invariance_property(pq, l1, l2):
    f = Frequency.rational(*pq)
    a = band_arcs(Couplings(l1, l2), f)
    b = band_arcs(Couplings(l2, l1), f)
    assert hausdorff_distance(a.arcs, b.arcs) < 1e-8


def test_traces_vectorized_matches_scalar():
    f = Frequency.rational(3, 7)
    zs = np.linspace(0, 2 * math.pi, 11)
    vec = monodromy_traces(SUPER, f, 0.21, zs)
    for z, v in zip(zs, vec):
        assert v == pytest.approx(monodromy_trace(SUPER, f, 0.21, z), rel=1e-12, abs=1e-12)
