import hypothesis
import hypothesis.strategies as st
import numpy as np
import pytest

import bellthresh as bt
from bellthresh.quantum import SIGNS


angles = st.floats(min_value=-np.pi, max_value=np.pi, allow_nan=False)


def random_setting(rng):
    vec = rng.normal(size=3)
    return bt.Setting(vec / np.linalg.norm(vec))


def test_pure_state_product_at_zero():
    rho = bt.pure_state(0.0).rho
    expected = np.zeros((4, 4))
    expected[0, 0] = 1.0
    np.testing.assert_allclose(rho, expected, atol=1e-15)


def test_pure_state_maximally_entangled_marginals():
    state = bt.pure_state(np.pi / 4)
    rho = state.rho
    reduced_a = np.array(
        [[rho[0, 0] + rho[1, 1], rho[0, 2] + rho[1, 3]], [rho[2, 0] + rho[3, 1], rho[2, 2] + rho[3, 3]]]
    )
    np.testing.assert_allclose(reduced_a, np.eye(2) / 2, atol=1e-14)


def test_pure_state_concurrence_spin_flip():
    # The spin-flip spectrum gives concurrence sin(2 theta) for this family.
    assert bt.concurrence(bt.pure_state(np.pi / 8)) == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert bt.concurrence(bt.pure_state(0.0)) == pytest.approx(0.0, abs=1e-10)
    assert bt.concurrence(bt.singlet()) == pytest.approx(1.0, abs=1e-12)


def test_singlet_is_pure_and_anticorrelated():
    s = bt.singlet()
    assert np.trace(s.rho).real == pytest.approx(1.0, abs=1e-14)
    assert s.purity() == pytest.approx(1.0, abs=1e-13)
    a = bt.Setting.from_xz_angle(0.7)
    assert bt.joint_probability(s, a, a, +1, +1) == pytest.approx(0.0, abs=1e-14)


def test_singlet_closed_form_many_settings():
    s = bt.singlet()
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a, b = random_setting(rng), random_setting(rng)
        c = a.dot(b)
        for alpha in SIGNS:
            for beta in SIGNS:
                expected = (1.0 - alpha * beta * c) / 4.0
                assert bt.joint_probability(s, a, b, alpha, beta) == pytest.approx(
                    expected, abs=1e-12
                )


def test_maximally_mixed_uniform_outcomes():
    state = bt.add_white_noise(bt.singlet(), 0.0)
    rng = np.random.default_rng(3)
    pp = bt.pair_probabilities(state, random_setting(rng), random_setting(rng))
    np.testing.assert_allclose(pp.table, 0.25, atol=1e-14)


def test_add_white_noise_identity_and_bounds():
    s = bt.singlet()
    np.testing.assert_allclose(bt.add_white_noise(s, 1.0).rho, s.rho, atol=1e-15)
    with pytest.raises(ValueError):
        bt.add_white_noise(s, 1.2)
    with pytest.raises(ValueError):
        bt.add_white_noise(s, -0.1)


def test_werner_critical_weight_is_symmetric_mixture():
    w = 1 / np.sqrt(2)
    state = bt.werner(w)
    a = bt.Setting.from_xz_angle(0.3)
    b = bt.Setting.from_xz_angle(1.4)
    c = a.dot(b)
    # Werner state scales the singlet correlations by w.
    assert bt.joint_probability(state, a, b, +1, +1) == pytest.approx((1 - w * c) / 4, abs=1e-13)


def test_projector_eigenprojectors():
    z = bt.Setting(np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(bt.projector(z, +1), np.diag([1.0, 0.0]), atol=1e-15)
    x = bt.Setting(np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(
        bt.projector(x, -1), np.array([[0.5, -0.5], [-0.5, 0.5]]), atol=1e-15
    )


@hypothesis.given(phi=angles)
def test_projector_completeness_and_idempotence(phi):
    setting = bt.Setting.from_xz_angle(phi)
    p_plus = bt.projector(setting, +1)
    p_minus = bt.projector(setting, -1)
    np.testing.assert_allclose(p_plus + p_minus, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(p_plus @ p_plus, p_plus, atol=1e-12)
    assert np.trace(p_plus).real == pytest.approx(1.0, abs=1e-12)


def test_product_state_along_z():
    state = bt.pure_state(0.0)
    z = bt.Setting.from_xz_angle(0.0)
    pp = bt.pair_probabilities(state, z, z)
    np.testing.assert_allclose(pp.table, [[1.0, 0.0], [0.0, 0.0]], atol=1e-14)


def test_pure_state_marginal_along_z():
    z = bt.Setting.from_xz_angle(0.0)
    rng = np.random.default_rng(5)
    for theta in rng.uniform(0, np.pi / 4, 20):
        pp = bt.pair_probabilities(bt.pure_state(theta), z, random_setting(rng))
        assert pp.marginal_plus_a == pytest.approx(np.cos(theta) ** 2, abs=1e-12)


@hypothesis.given(
    theta=st.floats(min_value=0.0, max_value=np.pi / 4),
    w=st.floats(min_value=0.0, max_value=1.0),
    a1=angles,
    a2=angles,
    b1=angles,
    b2=angles,
)
@hypothesis.settings(max_examples=60, deadline=None)
def test_normalization_and_no_signaling(theta, w, a1, a2, b1, b2):
    state = bt.add_white_noise(bt.pure_state(theta), w)
    alices = [bt.Setting.from_xz_angle(a1), bt.Setting.from_xz_angle(a2)]
    bobs = [bt.Setting.from_xz_angle(b1), bt.Setting.from_xz_angle(b2)]
    tables = {(i, j): bt.pair_probabilities(state, a, b) for i, a in enumerate(alices) for j, b in enumerate(bobs)}
    for pp in tables.values():
        assert pp.table.sum() == pytest.approx(1.0, abs=1e-12)
    for i in range(2):
        assert tables[(i, 0)].marginal_plus_a == pytest.approx(
            tables[(i, 1)].marginal_plus_a, abs=1e-12
        )
    for j in range(2):
        assert tables[(0, j)].marginal_plus_b == pytest.approx(
            tables[(1, j)].marginal_plus_b, abs=1e-12
        )


def test_state_validation_rejects_bad_matrices():
    with pytest.raises(ValueError):
        bt.TwoQubitState(np.eye(4))  # trace 4
    bad = np.eye(4, dtype=complex) / 4
    bad[0, 1] = 0.5  # not Hermitian
    with pytest.raises(ValueError):
        bt.TwoQubitState(bad)
    indefinite = np.diag([0.7, 0.5, -0.1, -0.1]).astype(complex)
    with pytest.raises(ValueError):
        bt.TwoQubitState(indefinite)


def test_setting_validation():
    with pytest.raises(ValueError):
        bt.Setting(np.array([1.0, 1.0, 0.0]))
    s = bt.Setting.from_spherical(0.7, 1.2)
    assert np.linalg.norm(s.bloch) == pytest.approx(1.0, abs=1e-14)


def test_bloch_form_matches_trace_route():
    rng = np.random.default_rng(17)
    for theta, w in [(0.3, 1.0), (np.pi / 4, 0.6), (0.1, 0.0)]:
        state = bt.add_white_noise(bt.pure_state(theta), w)
        r_a, r_b, corr = bt.bloch_form(state)
        for _ in range(10):
            a, b = random_setting(rng), random_setting(rng)
            u, v = a.bloch @ r_a, b.bloch @ r_b
            t = a.bloch @ corr @ b.bloch
            for alpha in SIGNS:
                for beta in SIGNS:
                    closed = (1 + alpha * u + beta * v + alpha * beta * t) / 4
                    assert bt.joint_probability(state, a, b, alpha, beta) == pytest.approx(
                        closed, abs=1e-12
                    )
