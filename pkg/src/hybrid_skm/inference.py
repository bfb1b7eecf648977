"""Bootstrap particle filter and particle-marginal Metropolis-Hastings.

Weights are kept in log space with a max shift. The filter resamples at
every observation time and returns the log of the product over observation
times of the mean unnormalised weight, which is an unbiased estimate of the
marginal likelihood when propagation is exact and resampling multinomial.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from . import _common as cm
from .engines import TRUNCATED_STATUS, Engine, propagate_kernel
from .gillespie import SsaConfig, sample_at_grid, simulate_gillespie
from .model import ReactionNetwork
from .ode import OK, StiffnessError
from .rng import as_generator, ess, warn

OBS_POISSON_BERNOULLI, OBS_POISSON, OBS_FLAT = 0, 1, 2
_OBS_KINDS = {"poisson_bernoulli": OBS_POISSON_BERNOULLI, "poisson": OBS_POISSON,
              "flat": OBS_FLAT}


class ParticleDegeneracyError(ValueError):
    """Every particle weight is zero."""


@dataclass(frozen=True)
class ObservationModel:
    """Independent per-species observation densities.

    ``poisson_bernoulli``: Y ~ Poisson(x) if x > 0, Bernoulli(p_zero) if x = 0.
    ``poisson``: Y ~ Poisson(x), a point mass at 0 when x = 0.
    ``flat``: density 1 for every y (the likelihood carries no information).
    """

    kind: str = "poisson_bernoulli"
    p_zero: float = 0.1

    def __post_init__(self):
        if self.kind not in _OBS_KINDS:
            raise ValueError(f"unknown observation model {self.kind!r}")
        if not 0.0 < self.p_zero < 1.0:
            raise ValueError("p_zero must lie in (0, 1)")

    @property
    def code(self) -> int:
        return _OBS_KINDS[self.kind]

    def sample(self, x, rng) -> np.ndarray:
        g = as_generator(rng)
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "flat":
            return np.zeros(x.shape, dtype=np.int64)
        y = g.poisson(np.maximum(x, 0.0)).astype(np.int64)
        if self.kind == "poisson_bernoulli":
            zero = x <= 0.0
            y[zero] = (g.random(int(zero.sum())) < self.p_zero).astype(np.int64)
        return y


@dataclass(frozen=True)
class Dataset:
    times: np.ndarray
    y: np.ndarray  # (n_obs, k) nonnegative integers
    species_names: tuple[str, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        y = np.asarray(self.y)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("need at least one observation time")
        if t[0] != 0.0:
            raise ValueError("the first observation must be at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if y.ndim != 2 or y.shape[0] != t.size:
            raise ValueError("y must hold one row per observation time")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("observations must be nonnegative integers")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "y", y.astype(np.int64))
        names = tuple(self.species_names) or tuple(f"y_{i + 1}" for i in range(y.shape[1]))
        object.__setattr__(self, "species_names", names)

    @property
    def n_species(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *(f"y_{i + 1}" for i in range(self.n_species))])
            for t, row in zip(self.times, self.y):
                w.writerow([repr(float(t)), *(int(v) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "t":
            raise ValueError(f"{path}: expected a header starting with 't'")
        body = [r for r in rows[1:] if r]
        try:
            times = [float(r[0]) for r in body]
            y = [[int(v) for v in r[1:]] for r in body]
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
        return cls(np.array(times), np.array(y, dtype=np.int64).reshape(len(body), -1))


@dataclass(frozen=True)
class Prior:
    """Independent Uniform(low, high) priors on each free log c_i."""

    low: float = -8.0
    high: float = 8.0

    def logpdf(self, theta, mask) -> float:
        free = np.asarray(theta)[np.asarray(mask, dtype=bool)]
        if np.all((free >= self.low) & (free <= self.high)):
            return -free.size * math.log(self.high - self.low)
        return -math.inf


@dataclass
class ParticleCloud:
    states: np.ndarray  # (N, k)
    log_weights: np.ndarray  # unnormalised, log scale
    log_ml: float

    @property
    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights
        m = np.max(lw)
        if not np.isfinite(m):
            raise ParticleDegeneracyError("all particle weights are zero")
        w = np.exp(lw - m)
        return w / w.sum()


@dataclass
class FilterResult:
    log_ml: float
    increments: np.ndarray  # log mean weight at each observation time
    cloud: ParticleCloud
    counters: dict


@dataclass
class PmmhChain:
    log_c: np.ndarray  # (n_iter, r)
    logpost_hat: np.ndarray
    accepted: np.ndarray
    mask: np.ndarray  # True for free coordinates
    proposal_cov: np.ndarray  # on the free coordinates
    prior: Prior = field(default_factory=Prior)
    elapsed: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            r = self.log_c.shape[1]
            w.writerow(["iter", "logpost_hat", "accepted", *(f"log_c_{i + 1}" for i in range(r))])
            for i in range(self.log_c.shape[0]):
                w.writerow([i, repr(float(self.logpost_hat[i])), int(self.accepted[i]),
                            *(repr(float(v)) for v in self.log_c[i])])

    def summary(self) -> dict:
        """Medians, 95% intervals and ESS of the free coordinates."""
        out = {"acceptance_rate": self.acceptance_rate, "iterations": int(self.log_c.shape[0]),
               "parameters": {}}
        min_ess = math.inf
        for i in np.nonzero(self.mask)[0]:
            col = self.log_c[:, i]
            q = np.quantile(col, [0.025, 0.5, 0.975])
            e = ess(col) if col.size >= 10 else float("nan")
            min_ess = min(min_ess, e)
            out["parameters"][f"log_c_{i + 1}"] = {"median": float(q[1]), "lo95": float(q[0]),
                                                 "hi95": float(q[2]), "ess": float(e)}
        out["min_ess"] = float(min_ess) if out["parameters"] else float("nan")
        out["min_ess_per_sec"] = (out["min_ess"] / self.elapsed if self.elapsed > 0
                                  else float("nan"))
        return out


# -- compiled kernels ----------------------------------------------------------

@njit(cache=True)
def _obs_logdensity(kind, p_zero, y, x):
    if kind == OBS_FLAT:
        return 0.0
    total = 0.0
    for i in range(y.size):
        xi = x[i]
        yi = y[i]
        if xi > 0.0:
            total += yi * math.log(xi) - xi - math.lgamma(yi + 1.0)
        elif kind == OBS_POISSON:
            if yi != 0:
                return -np.inf
        elif yi == 0:
            total += math.log1p(-p_zero)
        elif yi == 1:
            total += math.log(p_zero)
        else:
            return -np.inf
    return total


@njit(cache=True)
def _resample_indices(w, n, rng, systematic, out):
    """Ancestors from normalised weights ``w`` by inversion of the cumulative sum."""
    cum = np.cumsum(w)
    total = cum[-1]
    if systematic:
        u0 = rng.random()
        j = 0
        for i in range(n):
            u = (u0 + i) / n * total
            while j < w.size - 1 and cum[j] <= u:
                j += 1
            out[i] = j
        return
    u = np.empty(n)
    for i in range(n):
        u[i] = rng.random() * total
    u.sort()
    j = 0
    for i in range(n):
        while j < w.size - 1 and cum[j] <= u[i]:
            j += 1
        out[i] = j
    # sorting made the ancestors monotone; shuffle back to iid order
    for i in range(n - 1, 0, -1):
        s = int(rng.random() * (i + 1))
        tmp = out[i]
        out[i] = out[s]
        out[s] = tmp


@njit(cache=True, nogil=True)
def filter_kernel(code, X, times, ys, c, A, rtype, ridx, hp, opts, cp, max_events, obs_kind,
                  p_zero, rng, systematic, counters, incr, logw):
    """Run the bootstrap filter on particles X (N x k, modified in place).

    Fills incr[j] = log mean weight at observation j and the final log
    weights; returns (status, log_ml). A degenerate cloud gives -inf.
    """
    n, k = X.shape
    nobs = times.size
    anc = np.empty(n, dtype=np.int64)
    Xn = np.empty_like(X)
    w = np.empty(n)
    x = np.empty(k)
    log_ml = 0.0
    for j in range(nobs):
        if j > 0:
            _resample_indices(w, n, rng, systematic, anc)
            for p in range(n):
                Xn[p, :] = X[anc[p], :]
            for p in range(n):
                for i in range(k):
                    x[i] = Xn[p, i]
                status = propagate_kernel(code, x, times[j - 1], times[j], c, A, rtype, ridx,
                                          hp, opts, cp, max_events, rng, counters)
                if status != OK:
                    return status, np.nan
                X[p, :] = x
        m = -np.inf
        for p in range(n):
            lw = _obs_logdensity(obs_kind, p_zero, ys[j], X[p])
            logw[p] = lw
            if lw > m:
                m = lw
        if m == -np.inf:
            for jj in range(j, nobs):
                incr[jj] = -np.inf
            return OK, -np.inf
        s = 0.0
        for p in range(n):
            w[p] = np.exp(logw[p] - m)
            s += w[p]
        incr[j] = m + np.log(s / n)
        log_ml += incr[j]
        for p in range(n):
            w[p] /= s
    return OK, log_ml


# -- public operations -------------------------------------------------------

def obs_logdensity(model: ObservationModel, y, x) -> float:
    """log pi(y | x), summed over species."""
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("observations must be nonnegative integers")
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise ValueError("y and x must have the same shape")
    return float(_obs_logdensity(model.code, model.p_zero, y.astype(np.int64), x))


def multinomial_resample(weights, N: int, rng, systematic: bool = False) -> np.ndarray:
    """N ancestor indices drawn with probabilities ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a nonnegative finite vector")
    if not w.sum() > 0:
        raise ParticleDegeneracyError("all particle weights are zero")
    out = np.empty(int(N), dtype=np.int64)
    _resample_indices(w / w.sum(), int(N), as_generator(rng), systematic, out)
    return out


def _initial_particles(x0, N, k, x0_sampler, rng):
    if x0_sampler is not None:
        X = np.array(x0_sampler(N, rng), dtype=np.float64)
        if X.shape != (N, k):
            raise ValueError(f"x0_sampler must return an ({N}, {k}) array")
        return X
    return np.tile(np.asarray(x0, dtype=np.float64), (N, 1))


def bootstrap_filter_detail(network: ReactionNetwork, simulator: Engine, c, dataset: Dataset,
                            model: ObservationModel, N: int, rng, x0=None,
                            x0_sampler: Callable | None = None,
                            systematic: bool = False) -> FilterResult:
    if N < 2:
        raise ValueError("the filter needs at least two particles")
    k = network.n_species
    if dataset.n_species != k:
        raise ValueError(f"dataset has {dataset.n_species} species, network has {k}")
    if x0 is None and x0_sampler is None:
        x0 = np.zeros(k)
    X = _initial_particles(x0, N, k, x0_sampler, rng)
    A, rtype, ridx = network.kernel_arrays()
    code, hp, opts, cp, me = simulator.kernel_args(k)
    counters = cm.new_counters()
    incr = np.zeros(dataset.times.size)
    logw = np.empty(N)
    status, log_ml = filter_kernel(code, X, dataset.times, dataset.y, network.rates(c), A, rtype,
                                   ridx, hp, opts, cp, me, model.code, model.p_zero,
                                   as_generator(rng), systematic, counters, incr, logw)
    if status == TRUNCATED_STATUS:
        raise RuntimeError(f"event limit {me} reached inside the particle filter")
    if status != OK:
        raise StiffnessError("LNA integration failed inside the particle filter")
    return FilterResult(float(log_ml), incr, ParticleCloud(X, logw, float(log_ml)),
                        cm.counters_dict(counters))


def bootstrap_filter(network: ReactionNetwork, simulator: Engine, c, dataset: Dataset,
                     model: ObservationModel, N: int, rng, **kwargs) -> float:
    """Estimate of log pi(y | c); -inf when the particle cloud degenerates."""
    return bootstrap_filter_detail(network, simulator, c, dataset, model, N, rng,
                                   **kwargs).log_ml


def metropolis_hastings(loglik: Callable, prior: Prior, init_c, n_iter: int, proposal_cov,
                        mask, rng) -> PmmhChain:
    """Random-walk MH on log c using ``loglik(c, rng)``, exact or estimated.

    The estimate for the current point is stored and reused until a move
    is accepted. A proposal identical to the current point (zero innovation)
    counts as accepted without a new likelihood evaluation.
    """
    g = as_generator(rng)
    init_c = np.asarray(init_c, dtype=np.float64)
    r = init_c.size
    mask = np.ones(r, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (r,):
        raise ValueError("mask must have one entry per rate constant")
    d = int(mask.sum())
    cov = np.atleast_2d(np.asarray(proposal_cov, dtype=np.float64))
    if cov.shape != (d, d):
        raise ValueError(f"proposal covariance must be {d} x {d}")
    if not np.allclose(cov, cov.T):
        raise ValueError("proposal covariance must be symmetric")
    vals, vecs = np.linalg.eigh(cov)
    if np.any(vals < -1e-12 * max(1.0, vals.max(initial=0.0))):
        raise ValueError("proposal covariance must be positive semidefinite")
    L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    theta = np.log(init_c)
    lp = prior.logpdf(theta, mask)
    if not np.isfinite(lp):
        raise ValueError("initial rate constants lie outside the prior support")
    ll = loglik(np.exp(theta), g)
    out_theta = np.empty((n_iter, r))
    out_post = np.empty(n_iter)
    out_acc = np.zeros(n_iter, dtype=bool)
    t_start = time.perf_counter()
    for it in range(n_iter):
        step = L @ g.standard_normal(d)
        if not np.any(step):
            out_acc[it] = True
        else:
            prop = theta.copy()
            prop[mask] += step
            lp_prop = prior.logpdf(prop, mask)
            if np.isfinite(lp_prop):
                ll_prop = loglik(np.exp(prop), g)
                log_alpha = (ll_prop + lp_prop) - (ll + lp)
                if ll_prop > -math.inf and (ll == -math.inf
                                            or math.log(g.random()) < log_alpha):
                    theta, ll, lp = prop, ll_prop, lp_prop
                    out_acc[it] = True
        out_theta[it] = theta
        out_post[it] = ll + lp
    return PmmhChain(out_theta, out_post, out_acc, mask, cov, prior,
                     time.perf_counter() - t_start)


def pmmh(network: ReactionNetwork, simulator: Engine, dataset: Dataset, model: ObservationModel,
         prior: Prior, init_c, n_iter: int, N: int, proposal_cov, mask, rng, x0=None,
         systematic: bool = False) -> PmmhChain:
    """Particle-marginal MH over log c with the bootstrap filter as likelihood."""

    def loglik(c, g):
        return bootstrap_filter(network, simulator, c, dataset, model, N, g, x0=x0,
                                systematic=systematic)

    return metropolis_hastings(loglik, prior, init_c, n_iter, proposal_cov, mask, rng)


def tune_particle_count(network: ReactionNetwork, simulator: Engine, dataset: Dataset,
                        model: ObservationModel, c_hat, rng, n_start: int = 50,
                        repeats: int = 25, target: tuple[float, float] = (1.0, 3.0),
                        cap: int = 10**5, x0=None, report: list | None = None) -> int:
    """Smallest N on a doubling schedule whose log-likelihood variance is at most target[1].

    The variance is the sample variance of ``repeats`` filter estimates at
    ``c_hat``. If it is already below target[0] at ``n_start``, that is
    returned. Each (N, variance) pair is appended to ``report`` if given.
    """
    g = as_generator(rng)
    n = int(n_start)
    while True:
        est = np.array([bootstrap_filter(network, simulator, c_hat, dataset, model, n, g, x0=x0)
                        for _ in range(repeats)])
        var = float(np.var(est, ddof=1)) if np.all(np.isfinite(est)) else math.inf
        if report is not None:
            report.append((n, var))
        if var <= target[1]:
            return n
        if 2 * n > cap:
            warn(f"particle count cap {cap} reached with log-likelihood variance {var:.3g}")
            return int(cap)
        n *= 2


@dataclass
class ScalingResult:
    gamma: float
    var_c: np.ndarray  # covariance of the free log c in the pilot chain
    window_rates: list
    chain: PmmhChain | None = None

    @property
    def proposal_cov(self) -> np.ndarray:
        return self.gamma * self.var_c


def pilot_covariance(pilot_chain: PmmhChain, burn_frac: float = 0.5) -> np.ndarray:
    """Sample covariance of the free log c after discarding ``burn_frac`` of the chain."""
    free = pilot_chain.log_c[:, pilot_chain.mask]
    free = free[int(burn_frac * free.shape[0]):]
    d = free.shape[1]
    cov = np.atleast_2d(np.cov(free, rowvar=False)) if free.shape[0] > 1 else np.full((d, d),
                                                                                     np.nan)
    if not np.all(np.isfinite(cov)) or not np.any(np.diag(cov) > 0):
        warn("pilot variance estimate is not usable; falling back to the identity")
        return np.eye(d)
    return cov


def tune_scaling(pilot_chain: PmmhChain, run_window: Callable, gamma0: float | None = None,
                 window: int = 1000, target: tuple[float, float] = (0.07, 0.13),
                 aim: float = 0.10, max_windows: int = 20) -> ScalingResult:
    """Scale gamma so that the acceptance rate over a window lands in ``target``.

    ``run_window(cov, n_iter)`` must continue a chain for ``n_iter`` steps
    with proposal covariance ``cov`` and return the :class:`PmmhChain`.
    gamma follows a Robbins-Monro recursion on log gamma with gain 1/sqrt(m)
    in window m.
    """
    var_c = pilot_covariance(pilot_chain)
    d = var_c.shape[0]
    gamma = gamma0 if gamma0 is not None else 2.38**2 / d
    rates = []
    chain = None
    for m in range(1, max_windows + 1):
        chain = run_window(gamma * var_c, window)
        rate = chain.acceptance_rate
        rates.append((gamma, rate))
        if target[0] <= rate <= target[1]:
            return ScalingResult(gamma, var_c, rates, chain)
        gamma *= math.exp((rate - aim) / (aim * math.sqrt(m)))
    warn(f"acceptance rate still outside {target} after {max_windows} windows")
    return ScalingResult(gamma, var_c, rates, chain)


def synthesize_dataset(network: ReactionNetwork, c, x0, t_end: float, grid: float,
                       model: ObservationModel, rng) -> tuple[Dataset, np.ndarray]:
    """Exact path observed with noise on a regular grid; returns (dataset, true states)."""
    g = as_generator(rng)
    traj = simulate_gillespie(network, c, x0, SsaConfig(t_end), g)
    times = grid * np.arange(int(np.floor(t_end / grid + 1e-9)) + 1)
    truth = sample_at_grid(traj, times)
    y = np.array([model.sample(x, g) for x in truth])
    return Dataset(times, y, network.species_names), truth
