"""Exit criteria. Each test prints one PASS/FAIL line (repeated in the summary)."""

import math

import numpy as np
import pytest
from scipy import stats

from hybrid_skm import _common as cm
from hybrid_skm.cli import benchmark, main
from hybrid_skm.engines import Engine
from hybrid_skm.inference import (ObservationModel, Prior, bootstrap_filter,
                                  metropolis_hastings, pmmh, synthesize_dataset,
                                  tune_particle_count, tune_scaling)
from hybrid_skm.lna_hybrid import HybridConfig, classify_reactions, probable_bound
from hybrid_skm.model import autoregulatory, make_network
from hybrid_skm.ode import gaussian_at, integrate_lna
from hybrid_skm.rng import RngStream

from oracles import (PureImmigrationLikelihood, immigration_death_moments, poisson_logpmf,
                     two_sample_chi2)

pytestmark = pytest.mark.acceptance


def _x1_at(engine, net, times, reps, seed):
    out = np.empty((reps, len(times)))
    for i in range(reps):
        g = RngStream(seed, i)
        x, t = np.zeros(2), 0.0
        for j, t1 in enumerate(times):
            x = engine.propagate(net, x, t, t1, None, g)
            t = t1
            out[i, j] = x[0]
    return out


@pytest.mark.slow
def test_simulators_agree_at_sc10(report):
    net = autoregulatory(10.0)
    times = [10.0, 30.0, 50.0]
    ref = np.percentile(_x1_at(Engine("gillespie"), net, times, 5000, 11), [25, 50, 75], axis=0)
    ok, parts = True, []
    for name, seed in (("hybrid-lna", 12), ("hybrid-sde", 13)):
        q = np.percentile(_x1_at(Engine(name), net, times, 5000, seed), [25, 50, 75], axis=0)
        d_med = np.abs(q[1] - ref[1]).max()
        d_iqr = max(np.abs(q[0] - ref[0]).max(), np.abs(q[2] - ref[2]).max())
        ok &= d_med <= 2 and d_iqr <= 3
        parts.append(f"{name} max|dmedian|={d_med:g} max|dIQR|={d_iqr:g}")
    parts.append("gillespie q25/q50/q75 at t=50: " + "/".join(f"{v:g}" for v in ref[:, 2]))
    assert report(1, "simulator agreement", ok, "; ".join(parts))


def _deviation_exceedance(x_start, eps, n_paths, seed):
    """Fraction of LNA deviation paths whose slow hazard beats the probable bound."""
    c1, c3, b, dt = 1000.0, 1.0, 0.002, 0.1
    # fast immigration-death X read out by the slow X -> X + Y
    net = make_network(["X", "Y"], [({}, {"X": 1}, c1), ({"X": 1}, {}, c3),
                                    ({"X": 1}, {"X": 1, "Y": 1}, b)])
    x = np.array([x_start, 0.0])
    part = classify_reactions(net, None, x, HybridConfig())
    assert part.fast_reactions == (0, 1) and part.slow_reactions == (2,)
    st, _, rm = integrate_lna(net, part, None, x, dt)
    info = probable_bound(rm, st.tau, eps, 2)
    # deviation SDE dM = -c3 M dt + sqrt(c1 + c3 eta) dW along the exact mean path
    n_steps = 2000
    h = dt / n_steps
    g = np.random.default_rng([seed, int(x_start)])
    M = np.zeros(n_paths)
    top = np.full(n_paths, b * x_start)
    for m in range(n_steps):
        t = m * h
        eta = c1 / c3 + (x_start - c1 / c3) * math.exp(-c3 * t)
        M += -c3 * M * h + math.sqrt((c1 + c3 * eta) * h) * g.standard_normal(n_paths)
        eta1 = c1 / c3 + (x_start - c1 / c3) * math.exp(-c3 * (t + h))
        np.maximum(top, b * (eta1 + M), out=top)
    return float(np.mean(top > info.h_s_max))


@pytest.mark.slow
def test_probable_bound_calibration(report):
    eps, n = 0.05, 10_000
    limit = eps + 3 * math.sqrt(eps * (1 - eps) / n)
    rates = {x: _deviation_exceedance(x, eps, n, 21) for x in (600.0, 1000.0, 1400.0)}
    ok_cal = all(r <= limit for r in rates.values())

    # tight bound inside the real simulator: count thinning ratios above one
    net = autoregulatory(1000.0)
    eng = Engine("hybrid-lna", hybrid=HybridConfig(bound_eps=1e-6))
    counters = cm.new_counters()
    i = 0
    while counters[cm.INTERVALS] < 100_000:
        eng.propagate(net, [0, 0], 0.0, 50.0, None, RngStream(22, i), counters)
        i += 1
    viol = int(counters[cm.BOUND_VIOLATIONS])
    ok = ok_cal and viol == 0
    detail = ("exceedance " + ", ".join(f"x0={x:g}: {r:.4f}" for x, r in rates.items())
              + f" (limit {limit:.4f}); {viol} violations in {int(counters[cm.INTERVALS])} "
              f"intervals over {i} paths")
    assert report(2, "probable bound", ok, detail)


def test_lna_immigration_death_moments(report):
    c1, c3, x0 = 10.0, 0.1, 20.0
    net = make_network(["X"], [({}, {"X": 1}, c1), ({"X": 1}, {}, c3)])
    worst = 0.0
    for t in (0.5, 1.0, 5.0):
        st, _, _ = integrate_lna(net, None, None, [x0], t)
        mean, cov = gaussian_at(st)
        m, v = immigration_death_moments(c1, c3, x0, t)
        worst = max(worst, abs(mean[0] / m - 1), abs(cov[0, 0] / v - 1))
    assert report(3, "LNA moments", worst <= 1e-3, f"max relative error {worst:.2e}")


@pytest.mark.slow
def test_all_slow_hybrid_is_exact(report):
    net = autoregulatory(1.0)
    n = 10_000
    hyb_eng = Engine("hybrid-lna", hybrid=HybridConfig(force_all_slow=True))
    ssa_eng = Engine("gillespie")
    hyb = np.array([hyb_eng.propagate(net, [0, 0], 0.0, 5.0, None, RngStream(41, i))
                    for i in range(n)]).astype(np.int64)
    ssa = np.array([ssa_eng.propagate(net, [0, 0], 0.0, 5.0, None, RngStream(42, i))
                    for i in range(n)]).astype(np.int64)
    # joint histogram: one bin per (X1, X2) pair, rare pairs pooled in key order
    p = two_sample_chi2(hyb[:, 0] * 10_000 + hyb[:, 1], ssa[:, 0] * 10_000 + ssa[:, 1])
    assert report(4, "all-slow equivalence", p > 0.01, f"chi-square p = {p:.3f}")


def _immigration_problem():
    net = make_network(["X"], [({}, {"X": 1}, 2.0)])
    obs = ObservationModel("poisson")
    ds, _ = synthesize_dataset(net, None, [0], 10.0, 1.0, obs, RngStream(61))
    return net, obs, ds, PureImmigrationLikelihood(ds.times, ds.y, poisson_logpmf)


@pytest.mark.slow
def test_filter_marginal_likelihood(report):
    net, obs, ds, exact = _immigration_problem()
    est = np.array([bootstrap_filter(net, Engine("gillespie"), None, ds, obs, 5000,
                                     RngStream(51, i)) for i in range(50)])
    se = est.std(ddof=1) / math.sqrt(est.size)
    diff = est.mean() - exact(2.0)
    assert report(5, "marginal likelihood", abs(diff) <= 2 * se,
                  f"mean - exact = {diff:.5f}, 2 SE = {2 * se:.5f}")


@pytest.mark.slow
def test_pseudo_marginal_invariance(report):
    net, obs, ds, exact = _immigration_problem()
    grid = np.linspace(math.log(2.0) - 1.5, math.log(2.0) + 1.5, 601)
    lp = np.array([exact(math.exp(v)) for v in grid])
    w = np.exp(lp - lp.max())
    w /= w.sum()
    sd = math.sqrt(np.sum(w * grid**2) - np.sum(w * grid) ** 2)
    cov = [[(2.4 * sd) ** 2]]
    n_keep, burn = 10_000, 1000

    ex = metropolis_hastings(lambda c, g: exact(c[0]), Prior(), [2.0], burn + 10 * n_keep, cov,
                             None, RngStream(62))
    n_part = tune_particle_count(net, Engine("gillespie"), ds, obs, [2.0], RngStream(63))
    pf = pmmh(net, Engine("gillespie"), ds, obs, Prior(), [2.0], burn + 20 * n_keep, n_part,
              cov, None, RngStream(64))
    a = ex.log_c[burn::10, 0][:n_keep]
    b = pf.log_c[burn::20, 0][:n_keep]
    p = stats.ks_2samp(a, b).pvalue
    assert report(6, "pseudo-marginal invariance", p > 0.01,
                  f"KS p = {p:.3f} (N = {n_part}, acceptance exact {ex.acceptance_rate:.2f} "
                  f"/ PF {pf.acceptance_rate:.2f}, posterior sd {sd:.4f})")


@pytest.mark.slow
def test_autoregulatory_inference(report):
    net = autoregulatory(1.0)
    obs = ObservationModel()
    ds, _ = synthesize_dataset(net, None, [0, 0], 50.0, 1.0, obs, RngStream(71))
    eng = Engine("hybrid-lna")
    mask = np.array([True, True, False, True, True])
    truth = np.log(net.rate_constants)
    n_part, prior = 250, Prior()

    # pilot at the true values, then window-by-window scaling of its covariance
    pilot = pmmh(net, eng, ds, obs, prior, net.rate_constants, 2000, n_part,
                 0.05**2 * np.eye(4), mask, RngStream(72, 0))
    state = {"theta": pilot.log_c[-1].copy(), "k": 0}

    def run_window(cov, n):
        state["k"] += 1
        ch = pmmh(net, eng, ds, obs, prior, np.exp(state["theta"]), n, n_part, cov, mask,
                  RngStream(72, state["k"]))
        state["theta"] = ch.log_c[-1].copy()
        return ch

    scal = tune_scaling(pilot, run_window)
    chain = pmmh(net, eng, ds, obs, prior, np.exp(state["theta"]), 20_000, n_part,
                 scal.proposal_cov, mask, RngStream(73))
    lo, hi = np.quantile(chain.log_c, [0.025, 0.975], axis=0)
    inside = [(lo[i] <= truth[i] <= hi[i]) for i in np.nonzero(mask)[0]]
    acc = chain.acceptance_rate
    ok = all(inside) and 0.05 <= acc <= 0.15
    cis = ", ".join(f"log c{i + 1}={truth[i]:.3f} in [{lo[i]:.3f}, {hi[i]:.3f}]"
                    for i in np.nonzero(mask)[0])
    assert report(7, "autoregulatory inference", ok,
                  f"acceptance {acc:.3f}; {cis}; {len(scal.window_rates)} tuning windows")


@pytest.mark.slow
def test_hybrid_speedup_at_large_sc(report):
    engines = [Engine("gillespie"), Engine("hybrid-lna")]
    rows = benchmark(autoregulatory, engines, [1.0, 1000.0], 200, 50.0, 81, np.zeros(2))
    t = {(sc, name): sec for sc, name, sec, _, _ in rows}
    ratio = t[(1000.0, "hybrid-lna")] / t[(1000.0, "gillespie")]
    small = t[(1.0, "hybrid-lna")] / t[(1.0, "gillespie")]
    assert report(8, "performance crossover", ratio <= 0.5,
                  f"hybrid/gillespie at sc=1000: {ratio:.3f} "
                  f"({t[(1000.0, 'hybrid-lna')] * 1e3:.2f} ms vs "
                  f"{t[(1000.0, 'gillespie')] * 1e3:.2f} ms); at sc=1: {small:.2f}")


def test_determinism_across_runs_and_threads(report, tmp_path, monkeypatch):
    sim = ["simulate", "--engine", "hybrid-lna", "--sc", "10", "--reps", "12", "--t-end", "10",
           "--seed", "91"]
    names = ["trajectories.csv", "quantiles_X1.csv", "quantiles_X2.csv"]
    outs = []
    for tag, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        assert main(sim + ["--threads", threads, "--out-dir", str(tmp_path / tag)]) == 0
        outs.append([(tmp_path / tag / n).read_bytes() for n in names])
    data = tmp_path / "d.csv"
    assert main(["synth-data", "--t-end", "10", "--seed", "92", "--out", str(data)]) == 0
    chains = []
    # the chain itself is serial; the global thread setting must not leak into it
    for tag, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        monkeypatch.setenv("HYBRID_SKM_THREADS", threads)
        out = tmp_path / f"chain_{tag}.csv"
        assert main(["infer", "--engine", "hybrid-lna", "--data", str(data), "--fix", "c3",
                     "--particles", "30", "--iters", "40", "--seed", "93",
                     "--out", str(out)]) == 0
        chains.append(out.read_bytes())
    ok = outs[0] == outs[1] == outs[2] and chains[0] == chains[1] == chains[2]
    assert report(9, "determinism", ok, "trajectory, quantile and chain CSVs compared byte for "
                  "byte over two runs and 1 vs 4 threads")
