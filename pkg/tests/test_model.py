import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_skm.model import (NetworkError, SystemState, Trajectory, apply_reaction,
                              autoregulatory, equilibrium_mre, hazard, hazards, make_network,
                              total_hazard)


def test_autoregulatory_hazards_by_hand():
    net = autoregulatory(1.0)
    np.testing.assert_allclose(hazards(net, [10, 5]), [2, 1, 0.2, 5, 1])
    assert total_hazard(net, [10, 5]) == pytest.approx(9.2)


def test_net_effect_rows():
    np.testing.assert_array_equal(autoregulatory().net_effect,
                                  [[1, 0], [0, 1], [-1, 0], [0, -1], [-1, 1]])


def test_zero_order_and_empty_reactant():
    net = autoregulatory(3.0)
    assert hazard(net, [0, 0], 0) == 2.0
    assert hazard(net, [0, 7], 2) == 0.0
    assert total_hazard(net, [0, 0]) == pytest.approx(2 + 3)


def test_zero_state_without_immigration():
    net = make_network(["A", "B"], [({"A": 1}, {}, 1.0), ({"A": 1, "B": 1}, {"B": 2}, 1.0)])
    assert total_hazard(net, [0, 0]) == 0.0


def test_single_reaction_total():
    net = make_network(["A"], [({"A": 2}, {}, 0.3)])
    assert total_hazard(net, [5]) == hazard(net, [5], 0) == pytest.approx(0.3 * 10)


def test_dimer_hazard_clamped_below_one():
    net = make_network(["A"], [({"A": 2}, {}, 1.0)])
    assert hazard(net, [0.5], 0) == 0.0
    assert hazard(net, [1.0], 0) == 0.0
    assert hazard(net, [2.5], 0) == pytest.approx(2.5 * 1.5 / 2)


def test_rate_override_per_call():
    net = autoregulatory(1.0)
    c = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    np.testing.assert_allclose(hazards(net, [2, 3], c), [1, 1, 2, 3, 6])
    with pytest.raises(NetworkError):
        hazards(net, [2, 3], c[:3])


@pytest.mark.parametrize("j, x, expected", [(4, [10, 5], [9, 6]), (0, [0, 0], [1, 0]),
                                            (2, [1, 0], [0, 0])])
def test_apply_reaction(j, x, expected):
    out = apply_reaction(SystemState(0.0, x), autoregulatory(), j)
    np.testing.assert_array_equal(out.x, expected)


def test_apply_reaction_clamps_and_counts():
    counters = {}
    out = apply_reaction(np.array([0.0, 0.0]), autoregulatory(), 2, counters)
    np.testing.assert_array_equal(out.x, [0, 0])
    assert counters["clamped"] == 1


@pytest.mark.parametrize("sc, expected", [(1.0, [50 * (2 - np.sqrt(2)), 1 + np.sqrt(2)]),
                                          (10.0, [47.506, 11.050])])
def test_equilibrium(sc, expected):
    np.testing.assert_allclose(equilibrium_mre(sc), expected, atol=1e-3)


@pytest.mark.parametrize("sc", [1.0, 10.0, 100.0, 1000.0])
def test_equilibrium_is_fixed_point(sc):
    net = autoregulatory(sc)
    eta = equilibrium_mre(sc)
    drift = net.net_effect.T @ hazards(net, eta)
    assert np.max(np.abs(drift)) < 1e-9 * max(1.0, sc)


def test_equilibrium_large_sc_limit():
    # the limit drops O(1/sc) relative terms (X2* = 1 + sqrt(1 + sc^2))
    sc = 1e4
    np.testing.assert_allclose(equilibrium_mre(sc), [50 - 25 / sc, sc], rtol=2 / sc)


def test_network_validation():
    with pytest.raises(NetworkError, match="order 3"):
        make_network(["A", "B"], [({"A": 2, "B": 1}, {}, 1.0)])
    with pytest.raises(NetworkError):
        make_network(["A"], [({"A": 1}, {}, 0.0)])
    with pytest.raises(NetworkError):
        make_network(["A"], [({"A": 1}, {}, -1.0)])


def test_state_and_trajectory_invariants():
    with pytest.raises(ValueError):
        SystemState(0.0, [-1.0])
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        Trajectory([0.5], [[1.0]])
    tr = Trajectory([0.0, 1.0], [[1.0], [2.0]])
    assert len(tr) == 2 and tr.final.t == 1.0


states = st.lists(st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=2)


@settings(max_examples=200, deadline=None)
@given(states)
def test_hazards_nonnegative(x):
    assert np.all(hazards(autoregulatory(7.0), x) >= 0)


@settings(max_examples=200, deadline=None)
@given(states, st.integers(0, 1), st.floats(0, 100))
def test_hazards_monotone_in_reactants(x, i, dx):
    net = make_network(["A", "B"], [({"A": 1}, {}, 1.3), ({"A": 1, "B": 1}, {}, 0.7),
                                    ({"B": 2}, {}, 0.2)])
    y = list(x)
    y[i] += dx
    assert np.all(hazards(net, y) >= hazards(net, x) - 1e-9 * (1 + np.abs(hazards(net, x))))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=2, max_size=2), st.integers(0, 4))
def test_apply_then_reverse_is_identity(x, j):
    net = autoregulatory()
    out = apply_reaction(np.array(x, dtype=float), net, j).x
    np.testing.assert_array_equal(out - net.net_effect[j], x)
