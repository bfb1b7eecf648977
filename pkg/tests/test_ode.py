import warnings

import numpy as np
import pytest

from hybrid_skm.lna_hybrid import HybridConfig, Partition, classify_reactions
from hybrid_skm.model import autoregulatory, hazards, make_network
from hybrid_skm.ode import (LnaState, OdeConfig, diffusion_matrix, drift_and_jacobian,
                            gaussian_at, integrate_lna)

from oracles import immigration_death_moments

C1, C3 = 10.0, 0.1


def _imd():
    return make_network(["X"], [({}, {"X": 1}, C1), ({"X": 1}, {}, C3)])


def test_drift_jacobian_immigration_death():
    alpha, F = drift_and_jacobian(_imd(), None, None, [30.0])
    assert alpha[0] == pytest.approx(C1 - C3 * 30)
    np.testing.assert_allclose(F, [[-C3]])


def test_all_slow_zero_drift():
    part = Partition((), (0, 1), ())
    alpha, F = drift_and_jacobian(_imd(), part, None, [30.0])
    assert alpha[0] == 0 and F[0, 0] == 0
    np.testing.assert_array_equal(diffusion_matrix(_imd(), part, None, [30.0]), [[0.0]])


def test_partial_fast_autoregulatory():
    net = autoregulatory(3.0)
    part = Partition((1, 3), (0, 2, 4), (1,))
    alpha, F = drift_and_jacobian(net, part, None, [20.0, 7.0])
    np.testing.assert_allclose(alpha, [0, 3.0 - 7.0])
    np.testing.assert_allclose(F, [[0, 0], [0, -1.0]])


def test_diffusion_square_root():
    net = make_network(["A", "B"], [({}, {"A": 1}, 4.0)])
    np.testing.assert_allclose(diffusion_matrix(net, None, None, [1.0, 1.0]),
                               [[2, 0], [0, 0]], atol=1e-12)
    net = autoregulatory(5.0)
    eta = np.array([30.0, 9.0])
    B = diffusion_matrix(net, None, None, eta)
    A = net.net_effect.astype(float)
    np.testing.assert_allclose(B @ B.T, A.T @ np.diag(hazards(net, eta)) @ A, atol=1e-10)


@pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
@pytest.mark.parametrize("stiff", [False, True])
def test_immigration_death_moments(t, stiff):
    x0 = 20.0
    st, dense, _ = integrate_lna(_imd(), None, None, [x0], t, OdeConfig(force_stiff=stiff))
    mean, cov = gaussian_at(st)
    m_ex, v_ex = immigration_death_moments(C1, C3, x0, t)
    assert mean[0] == pytest.approx(m_ex, rel=1e-3)
    assert cov[0, 0] == pytest.approx(v_ex, rel=1e-3)
    assert st.G[0, 0] == pytest.approx(np.exp(-C3 * t), rel=1e-4)


def test_initial_state_and_zero_noise():
    st = LnaState.initial([3.0, 4.0])
    mean, cov = gaussian_at(st)
    np.testing.assert_array_equal(mean, [3, 4])
    np.testing.assert_array_equal(cov, np.zeros((2, 2)))
    net = make_network(["A", "B"], [({"A": 1}, {"A": 2}, 0.0001)])
    st, _, _ = integrate_lna(net, Partition((), (0,), ()), None, [5.0, 1.0], 1.0)
    np.testing.assert_array_equal(st.Psi, 0)
    np.testing.assert_array_equal(st.tau, 0)


def test_structure_invariants_along_dense_output():
    net = autoregulatory(10.0)
    st, dense, _ = integrate_lna(net, None, None, [40.0, 12.0], 2.0)
    k = 2
    for row in dense.states:
        s = LnaState.from_vector(0.0, row, k)
        assert np.max(np.abs(s.G @ s.Ginv - np.eye(k))) <= 1e-6
        assert np.linalg.det(s.G) > 0
        np.testing.assert_allclose(s.Psi, s.Psi.T, atol=1e-9)
    taus = dense.states[:, -k:]
    assert np.all(np.diff(taus, axis=0) >= -1e-12)
    mean, cov = gaussian_at(st)
    assert np.all(np.linalg.eigvalsh(cov) >= -1e-9)


def test_tolerance_convergence():
    net = autoregulatory(10.0)
    a, _, _ = integrate_lna(net, None, None, [40.0, 12.0], 1.0, OdeConfig(1e-6, 1e-6))
    b, _, _ = integrate_lna(net, None, None, [40.0, 12.0], 1.0, OdeConfig(5e-7, 5e-7))
    assert np.max(np.abs(a.eta - b.eta)) < 10 * 5e-7 * np.max(np.abs(b.eta))


def test_reduced_block_matches_full_system():
    """Integrating only the fast species equals the full system with zeroed slow rates."""
    net = autoregulatory(1000.0)
    x = np.array([45.0, 900.0])
    part = classify_reactions(net, None, x, HybridConfig())
    assert part.fast_species == (1,)
    red, _, mx = integrate_lna(net, part, None, x, 0.1, OdeConfig(1e-9, 1e-9))
    # full system: species 0 joins the fast block through R1 with its rate set to zero
    c_full = net.rate_constants.copy()
    c_full[0] = 0.0
    full, _, _ = integrate_lna(net, Partition((0, 1, 3), (2, 4), (0, 1)), c_full, x, 0.1,
                               OdeConfig(1e-9, 1e-9))
    np.testing.assert_allclose(red.eta, full.eta, rtol=1e-8)
    np.testing.assert_allclose(red.G, full.G, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(red.Psi, full.Psi, rtol=1e-7, atol=1e-12)
    assert mx.lambda_s_max > 0


def test_dense_record_layout():
    _, dense, _ = integrate_lna(_imd(), None, None, [5.0], 1.0)
    assert dense.header()[:2] == ["t", "eta_1"]
    rows = dense.rows()
    assert rows.shape[1] == len(dense.header())
    assert rows[0, 0] == 0.0 and rows[-1, 0] == pytest.approx(1.0)


def test_invalid_dt():
    with pytest.raises(ValueError):
        integrate_lna(_imd(), None, None, [5.0], 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        integrate_lna(_imd(), None, None, [5.0], 0.1)
