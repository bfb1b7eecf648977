import numpy as np
import pytest
from scipy import stats

from hybrid_skm.rng import (RngStream, draw_bernoulli, draw_exponential, draw_mv_normal,
                            draw_poisson, draw_standard_normal, ess, normal_quantile, psd_sqrt)

from oracles import normal_quantile_mp


def test_same_seed_same_stream():
    a = RngStream(7, 3)
    b = RngStream(7, 3)
    assert [draw_exponential(a, 1.0) for _ in range(5)] == [draw_exponential(b, 1.0)
                                                            for _ in range(5)]


def test_streams_uncorrelated():
    a = RngStream(7, 0).generator.standard_normal(100_000)
    b = RngStream(7, 1).generator.standard_normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_exponential_mean_and_errors():
    g = RngStream(1).generator
    assert g.exponential(0.5, 10**6).mean() == pytest.approx(0.5, abs=0.002)
    with pytest.raises(ValueError):
        draw_exponential(RngStream(1), 0.0)


def test_discrete_draws():
    r = RngStream(2)
    assert all(draw_poisson(r, 0.0) == 0 for _ in range(100))
    assert np.mean([draw_bernoulli(r, 0.1) for _ in range(100_000)]) == pytest.approx(0.1,
                                                                                       abs=0.003)
    assert np.var([draw_standard_normal(r) for _ in range(100_000)]) == pytest.approx(1, abs=0.02)


@pytest.mark.parametrize("p", [0.5, 1.25e-7, 0.975, 1e-3, 0.9])
def test_normal_quantile_against_mpmath(p):
    assert normal_quantile(p) == pytest.approx(normal_quantile_mp(p), abs=1e-12)


def test_normal_quantile_values():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(1.25e-7) == pytest.approx(-5.157, abs=1e-3)
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


def test_normal_quantile_round_trip():
    p = np.linspace(1e-8, 1 - 1e-8, 1000)
    z = np.array([normal_quantile(v) for v in p])
    assert np.max(np.abs(stats.norm.cdf(z) - p)) < 1e-12


def test_mv_normal():
    r = RngStream(3)
    np.testing.assert_array_equal(draw_mv_normal(r, [1.0, 2.0], np.zeros((2, 2))), [1, 2])
    s = np.array([draw_mv_normal(r, [0.0], [[4.0]])[0] for _ in range(100_000)])
    assert s.var() == pytest.approx(4, abs=0.1)
    m = np.array([draw_mv_normal(r, [0.0, 0.0], np.diag([1.0, 9.0])) for _ in range(100_000)])
    assert abs(np.corrcoef(m.T)[0, 1]) < 0.02


def test_psd_sqrt_clamps_negative_eigenvalues():
    cov = np.array([[1.0, 0.0], [0.0, -1e-12]])
    L = psd_sqrt(cov)
    np.testing.assert_allclose(L @ L.T, [[1, 0], [0, 0]], atol=1e-15)
    with pytest.raises(ValueError):
        psd_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_ess_iid_alternating_ar1():
    g = RngStream(4).generator
    n = 10_000
    assert ess(g.standard_normal(n)) == pytest.approx(n, rel=0.2)
    alt = np.tile([1.0, -1.0], n // 2)
    out, flag = ess(alt, return_flag=True)
    assert out == n and flag == "clamped"
    rho = 0.9
    x = np.empty(200_000)
    x[0] = g.standard_normal()
    e = g.standard_normal(x.size) * np.sqrt(1 - rho**2)
    for i in range(1, x.size):
        x[i] = rho * x[i - 1] + e[i]
    assert ess(x) == pytest.approx(x.size * (1 - rho) / (1 + rho), rel=0.3)
    assert ess(np.ones(20), return_flag=True) == (1.0, "degenerate")
