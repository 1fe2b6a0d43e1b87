import numpy as np
import pytest

import bellthresh as bt
from bellthresh.bell import (
    LocalStrategyMixture,
    NoConclusiveEvents,
    correlator_from_joint,
    facet_center_weights,
    optimal_settings_quad,
)
from bellthresh.counting import DetectionProbabilities, FixedPairs
from bellthresh.detectors import PerfectStep

SQRT2 = np.sqrt(2.0)


def detection_for(state, a, b, n):
    f = PerfectStep(n)
    pp = bt.pair_probabilities(state, a, b)
    return bt.detection_probabilities(FixedPairs(n), f, f, pp)


def test_ch_value_zero_for_empty_detector():
    zero = DetectionProbabilities(0.0, 0.0, np.zeros((2, 2)))
    assert bt.ch_value(zero, zero, zero, zero) == 0.0


def test_ch_value_singlet_tsirelson():
    # Anticorrelated optimum: Bob's directions opposite to the usual quad.
    state = bt.singlet()
    quad = bt.SettingsQuad.from_xz_angles(
        0.0, np.pi / 2, np.pi + np.pi / 4, np.pi - np.pi / 4
    )
    ds = [detection_for(state, a, b, 1) for a, b in quad.pairs()]
    assert bt.ch_value(*ds) == pytest.approx((SQRT2 - 1) / 2, abs=1e-12)


def test_ch_small_phi_quadratic_value():
    # Maximally entangled state on the analytic settings family at phi=0.02:
    # exact single-pair value (3 cos(phi) - cos(3 phi) - 2) / 4.
    phi = 0.02
    state = bt.pure_state(np.pi / 4)
    quad = bt.SettingsQuad.from_xz_angles(0.0, 2 * phi, phi, -phi)
    ds = [detection_for(state, a, b, 1) for a, b in quad.pairs()]
    exact = (3 * np.cos(phi) - np.cos(3 * phi) - 2) / 4
    assert bt.ch_value(*ds) == pytest.approx(exact, abs=1e-14)
    assert exact == pytest.approx(0.75 * phi**2, rel=1e-3)  # quartic term ~ phi^2 relative


def test_ch_party_exchange_symmetry():
    rng = np.random.default_rng(2)
    state = bt.add_white_noise(bt.pure_state(0.5), 0.8)
    swapped = state.swap_parties()
    for _ in range(5):
        a1, a2, b1, b2 = rng.uniform(-np.pi, np.pi, 4)
        quad = bt.SettingsQuad.from_xz_angles(a1, a2, b1, b2)
        mirror = bt.SettingsQuad.from_xz_angles(b1, b2, a1, a2)
        n = int(rng.integers(1, 4))
        ds = [detection_for(state, a, b, n) for a, b in quad.pairs()]
        # exchanging roles transposes each setting pair: the (1,2)/(2,1) terms swap
        ds_m = [detection_for(swapped, a, b, n) for a, b in mirror.pairs()]
        assert bt.ch_value(*ds) == pytest.approx(bt.ch_value(*ds_m), abs=1e-12)


def test_postselected_correlator_closed_form_engine():
    state = bt.singlet()
    rng = np.random.default_rng(3)
    for n in range(1, 7):
        for _ in range(20):
            a = bt.Setting.from_xz_angle(rng.uniform(-np.pi, np.pi))
            b = bt.Setting.from_xz_angle(rng.uniform(-np.pi, np.pi))
            e = bt.postselected_correlator(detection_for(state, a, b, n))
            assert e == pytest.approx(
                bt.singlet_correlator_closed_form(n, a.dot(b)), abs=1e-12
            )


def test_postselected_correlator_basic_values():
    assert bt.singlet_correlator_closed_form(1, 0.4) == pytest.approx(-0.4, abs=1e-14)
    assert bt.singlet_correlator_closed_form(5, 0.0) == 0.0
    zero_mass = DetectionProbabilities(0.0, 0.0, np.zeros((2, 2)))
    with pytest.raises(NoConclusiveEvents):
        bt.postselected_correlator(zero_mass)


def test_chsh_value_forms():
    s = 1 / SQRT2
    assert bt.chsh_value(-s, -s, -s, s) == pytest.approx(2 * SQRT2, abs=1e-14)
    assert bt.chsh_value(0, 0, 0, 0) == 0.0


def test_singlet_chsh_closed_form_anchors():
    assert bt.singlet_chsh_closed_form(1) == pytest.approx(2 * SQRT2, abs=1e-14)
    assert bt.singlet_chsh_closed_form(2) == pytest.approx(8 * SQRT2 / 3, abs=1e-14)
    assert bt.singlet_chsh_closed_form(20) > 3.999
    values = [bt.singlet_chsh_closed_form(n) for n in range(1, 30)]
    # direct floats saturate at 4.0 in the twenties; the deficits stay strict
    assert all(b > a for a, b in zip(values[:20], values[1:20]))
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert all(v <= 4.0 for v in values)


def test_chsh_from_closed_correlators_matches():
    for n in range(1, 11):
        c = 1 / SQRT2
        e_same = bt.singlet_correlator_closed_form(n, c)
        e_opp = bt.singlet_correlator_closed_form(n, -c)
        s = bt.chsh_value(e_same, e_same, e_same, e_opp)
        assert s == pytest.approx(bt.singlet_chsh_closed_form(n), abs=1e-10)


def test_local_bound_closed_form():
    assert bt.local_bound_closed_form(1) == 2.0
    assert bt.local_bound_closed_form(2) == pytest.approx(3.2, abs=1e-15)
    values = [bt.local_bound_closed_form(n) for n in range(1, 30)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_limit_deficits_consistent_and_ordered():
    for n in range(1, 20):
        assert 4.0 - bt.singlet_chsh_closed_form(n) == pytest.approx(
            bt.singlet_chsh_limit_deficit(n), abs=1e-13
        )
        assert 4.0 - bt.local_bound_closed_form(n) == pytest.approx(
            bt.local_bound_limit_deficit(n), abs=1e-13
        )
    for n in range(1, 51):
        assert bt.singlet_chsh_limit_deficit(n) < bt.local_bound_limit_deficit(n)
        assert bt.singlet_chsh_limit_deficit(n) > 0.0


def test_ncopy_chsh_on_quantum_singlet_table():
    # n-copy statistics of the singlet at the optimal settings reproduce the
    # closed forms; the quantum table enters the same code path as mixtures.
    state = bt.singlet()
    quad = optimal_settings_quad()
    table = np.empty((2, 2, 2, 2))
    for (i, j), (a, b) in zip(((0, 0), (0, 1), (1, 0), (1, 1)), quad.pairs()):
        table[i, j] = bt.pair_probabilities(state, a, b).table
    for n in range(1, 8):
        assert bt.ncopy_postselected_chsh(table, n) == pytest.approx(
            bt.singlet_chsh_closed_form(n), abs=1e-12
        )


def test_facet_center_distribution_values():
    fc = bt.facet_center_distribution()
    for i, j in ((0, 0), (0, 1), (1, 0)):
        assert fc[i, j, 0, 0] + fc[i, j, 1, 1] == pytest.approx(0.75, abs=1e-15)
    assert fc[1, 1, 0, 0] + fc[1, 1, 1, 1] == pytest.approx(0.25, abs=1e-15)
    np.testing.assert_allclose(fc.sum(axis=(2, 3)), 1.0, atol=1e-15)


def test_werner_optimal_distribution_matches_facet_center():
    np.testing.assert_allclose(
        bt.werner_optimal_distribution(), bt.facet_center_distribution(), atol=1e-12
    )


def test_facet_center_reaches_local_bound():
    fc = bt.facet_center_distribution()
    for n in range(1, 7):
        assert bt.ncopy_postselected_chsh(fc, n) == pytest.approx(
            bt.local_bound_closed_form(n), abs=1e-13
        )


def test_local_strategy_mixture_validation():
    with pytest.raises(ValueError):
        LocalStrategyMixture((1.0,) * 16)  # does not sum to 1
    with pytest.raises(ValueError):
        LocalStrategyMixture((-0.1,) + (1.1 / 15,) * 15)
    uniform = LocalStrategyMixture((1 / 16,) * 16)
    table = uniform.single_copy_table()
    np.testing.assert_allclose(table.sum(axis=(2, 3)), 1.0, atol=1e-14)
    # uniform mixture is uncorrelated white noise
    np.testing.assert_allclose(table, 0.25, atol=1e-14)


def test_deterministic_strategies_saturate_chsh():
    weights = facet_center_weights()
    assert np.count_nonzero(weights) == 8
    for lam in range(16):
        w = np.zeros(16)
        w[lam] = 1.0
        table = LocalStrategyMixture(tuple(w)).single_copy_table()
        s1 = bt.ncopy_postselected_chsh(table, 1)
        assert s1 == pytest.approx(2.0, abs=1e-14)


def test_local_bound_numeric_small_n():
    for n in (1, 2):
        value, mixture, diag = bt.local_bound_numeric(n, seed=1, n_random_starts=12)
        bound = bt.local_bound_closed_form(n)
        assert value >= bound - 1e-6
        assert value <= bound + 1e-4
        assert diag["converged"]
        assert sum(mixture.weights) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        bt.local_bound_numeric(7)


def test_correlator_from_joint_bounds():
    rng = np.random.default_rng(6)
    for _ in range(50):
        j = rng.uniform(0, 1, (2, 2))
        assert -1.0 <= correlator_from_joint(j) <= 1.0
