"""Chemical Langevin simulation and the residual-based CLE/Markov-jump hybrid.

The plain CLE treats every reaction as continuous and takes Euler-Maruyama
steps. The hybrid moves fast species by the same Euler scheme and gives each
slow reaction j a residual R_j = log(u) + integral of h_j, which fires the
reaction when it crosses zero. An interval with one crossing is replayed
with the same Gaussian increments up to the (linearly interpolated) crossing
time; an interval with several crossings is retried with a shorter length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _common as cm
from .lna_hybrid import HybridConfig, classify_kernel
from .model import ReactionNetwork, Trajectory, _hazard_one
from .rng import as_generator


@dataclass(frozen=True)
class CleConfig:
    dt_euler: float = 0.005
    dt_hybrid: float = 0.1
    rewind_shrink: float = 0.5
    min_dt_hybrid: float | None = None  # defaults to dt_euler

    def __post_init__(self):
        if not (self.dt_euler > 0 and self.dt_hybrid > 0):
            raise ValueError("time steps must be positive")
        if self.dt_euler > self.dt_hybrid:
            raise ValueError("dt_euler must not exceed dt_hybrid")
        if not 0.0 < self.rewind_shrink < 1.0:
            raise ValueError("rewind_shrink must lie in (0, 1)")
        if self.min_dt_hybrid is not None and not self.min_dt_hybrid > 0:
            raise ValueError("min_dt_hybrid must be positive")

    @property
    def floor(self) -> float:
        return self.dt_euler if self.min_dt_hybrid is None else self.min_dt_hybrid

    def kernel_params(self) -> np.ndarray:
        return np.array([self.dt_euler, self.dt_hybrid, self.rewind_shrink, self.floor])


@dataclass
class ResidualSet:
    """Residuals R_j of the slow reactions and the uniforms u_j with R_j(t0) = log u_j.

    ``active[j]`` is False until R_j has been drawn.
    """

    R: np.ndarray
    u: np.ndarray
    active: np.ndarray

    @classmethod
    def empty(cls, r: int) -> "ResidualSet":
        return cls(np.zeros(r), np.ones(r), np.zeros(r, dtype=bool))

    def reset(self, j: int, rng) -> None:
        g = as_generator(rng)
        u = g.random()
        while u == 0.0:
            u = g.random()
        self.u[j] = u
        self.R[j] = np.log(u)
        self.active[j] = True


# -- compiled kernels ----------------------------------------------------------

@njit(cache=True, inline="always")
def _log_uniform(rng):
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return np.log(u)


@njit(cache=True)
def _n_steps(dth, dt_e):
    return max(1, int(np.ceil(dth / dt_e - 1e-9)))


@njit(cache=True, nogil=True)
def cle_advance(x, t0, t1, c, A, rtype, ridx, dt_e, rng, record, counters):
    """Euler-Maruyama over [t0, t1] with every reaction continuous.

    The noise term uses one Wiener increment per reaction,
    A' diag(sqrt(h)) dW, which has the CLE covariance A' diag(h) A dt.
    """
    r, k = A.shape
    h = np.empty(r)
    ts, xs = cm.new_buffer(k, record)
    nrec = 0
    n = _n_steps(t1 - t0, dt_e)
    step = (t1 - t0) / n
    sq = np.sqrt(step)
    for m in range(n):
        for j in range(r):
            h[j] = _hazard_one(c[j], rtype[j], x[ridx[j, 0]], x[ridx[j, 1]])
        for j in range(r):
            if c[j] == 0.0:
                continue
            inc = h[j] * step + np.sqrt(h[j]) * sq * rng.standard_normal()
            for i in range(k):
                if A[j, i] != 0.0:
                    x[i] += A[j, i] * inc
        for i in range(k):
            if x[i] < 0.0:
                x[i] = 0.0
                counters[cm.CLAMPS] += 1
        if record:
            t = t1 if m == n - 1 else t0 + (m + 1) * step
            ts, xs, nrec = cm.push(ts, xs, nrec, t, x)
    return ts, xs, nrec


@njit(cache=True)
def euler_steps(x, R, active, c, fast, A, rtype, ridx, dW, m0, m1, step, t0, h, cross_j,
                cross_tau, detect):
    """Steps m0..m1-1 of an interval starting at t0 with increments dW[m].

    Fast species move by Euler-Maruyama; active residuals of slow reactions
    grow by h_j * step. With ``detect`` set, residuals that cross zero are
    listed in cross_j / cross_tau (linear root); returns their number.
    """
    r, k = A.shape
    ncross = 0
    for m in range(m0, m1):
        for j in range(r):
            h[j] = _hazard_one(c[j], rtype[j], x[ridx[j, 0]], x[ridx[j, 1]])
        for j in range(r):
            if fast[j] or not active[j]:
                continue
            old = R[j]
            R[j] = old + h[j] * step
            if detect and old < 0.0 <= R[j]:
                cross_j[ncross] = j
                cross_tau[ncross] = t0 + (m + 1) * step - R[j] / h[j]
                ncross += 1
        _euler_fast(x, c, fast, A, h, step, dW[m])
    return ncross


@njit(cache=True, inline="always")
def _euler_fast(x, c, fast, A, h, step, dw):
    r, k = A.shape
    for j in range(r):
        if not fast[j] or c[j] == 0.0:
            continue
        inc = h[j] * step + np.sqrt(h[j]) * dw[j]
        for i in range(k):
            if A[j, i] != 0.0:
                x[i] += A[j, i] * inc
    for i in range(k):
        if x[i] < 0.0:
            x[i] = 0.0


@njit(cache=True, nogil=True)
def hybrid_sde_advance(x, t0, t1, c, A, rtype, ridx, hp, cp, rng, record, counters):
    """Run the residual hybrid on [t0, t1], updating x in place.

    ``hp`` holds the classification parameters (as for the LNA hybrid) and
    ``cp`` = (dt_euler, dt_hybrid, rewind_shrink, min_dt_hybrid). Residuals
    are drawn afresh on entry; by memorylessness this leaves the law of the
    path unchanged, and it keeps the per-call state to x alone.
    """
    r, k = A.shape
    nstar, eps_star, eps_h = hp[2], hp[3], hp[4]
    force_slow = hp[6] != 0.0
    dt_e, dt_h0, shrink, floor = cp[0], cp[1], cp[2], cp[3]
    nmax = _n_steps(dt_h0, dt_e) + 1
    dW = np.zeros((nmax, r))
    h = np.empty(r)
    fast = np.zeros(r, dtype=np.bool_)
    fastsp = np.zeros(k, dtype=np.bool_)
    R = np.zeros(r)
    active = np.zeros(r, dtype=np.bool_)
    x_save = np.empty(k)
    R_save = np.empty(r)
    cross_j = np.empty(r, dtype=np.int64)
    cross_tau = np.empty(r)
    dw_part = np.empty(r)
    ts, xs = cm.new_buffer(k, record)
    nrec = 0
    t = t0
    dth_cur = dt_h0
    eps_t = 1e-12 * max(1.0, abs(t1))
    while t1 - t > eps_t:
        dth = min(dth_cur, t1 - t)
        classify_kernel(x, c, A, rtype, ridx, dth, nstar, eps_star, eps_h, force_slow, h,
                        fast, fastsp)
        counters[cm.RECLASSIFICATIONS] += 1
        for i in range(k):
            if not fastsp[i] and x[i] != np.floor(x[i]):
                x[i] = max(np.floor(x[i] + 0.5), 0.0)
        for j in range(r):
            if not fast[j] and not active[j]:
                R[j] = _log_uniform(rng)
                active[j] = True
        counters[cm.INTERVALS] += 1
        n = _n_steps(dth, dt_e)
        step = dth / n
        sq = np.sqrt(step)
        for m in range(n):
            for j in range(r):
                dW[m, j] = sq * rng.standard_normal() if fast[j] else 0.0
        for i in range(k):
            x_save[i] = x[i]
        for j in range(r):
            R_save[j] = R[j]
        ncross = euler_steps(x, R, active, c, fast, A, rtype, ridx, dW, 0, n, step, t, h,
                             cross_j, cross_tau, True)
        if ncross == 0:
            t = t + dth
            if t1 - t <= eps_t:
                t = t1
            dth_cur = dt_h0
            if record:
                ts, xs, nrec = cm.push(ts, xs, nrec, t, x)
            continue
        if ncross > 1:
            if dth * shrink >= floor:
                x[:] = x_save
                R[:] = R_save
                dth_cur = dth * shrink
                counters[cm.REWINDS] += 1
                continue
            counters[cm.FLOOR_FALLBACKS] += 1
        # earliest crossing
        best = 0
        for q in range(1, ncross):
            if cross_tau[q] < cross_tau[best]:
                best = q
        jstar = cross_j[best]
        tau = cross_tau[best]
        # replay with the same increments up to the step containing tau
        x[:] = x_save
        R[:] = R_save
        mstar = int(np.floor((tau - t) / step))
        if mstar >= n:
            mstar = n - 1
        if mstar < 0:
            mstar = 0
        euler_steps(x, R, active, c, fast, A, rtype, ridx, dW, 0, mstar, step, t, h,
                    cross_j, cross_tau, False)
        s = tau - (t + mstar * step)
        if s < 0.0:
            s = 0.0
        if s > step:
            s = step
        if s > 0.0:
            # Brownian bridge: increment over [0, s] given the full-step increment
            frac = s / step
            bsd = np.sqrt(s * (step - s) / step)
            for j in range(r):
                dw_part[j] = frac * dW[mstar, j] + (bsd * rng.standard_normal() if fast[j]
                                                    else 0.0)
            for j in range(r):
                h[j] = _hazard_one(c[j], rtype[j], x[ridx[j, 0]], x[ridx[j, 1]])
            for j in range(r):
                if not fast[j] and active[j]:
                    R[j] += h[j] * s
            _euler_fast(x, c, fast, A, h, s, dw_part)
        for i in range(k):
            x[i] += A[jstar, i]
            if x[i] < 0.0:
                x[i] = 0.0
                counters[cm.CLAMPS] += 1
        R[jstar] = _log_uniform(rng)
        counters[cm.EVENTS] += 1
        t = max(tau, t)
        if t1 - t <= eps_t:
            t = t1
        dth_cur = dt_h0
        if record:
            ts, xs, nrec = cm.push(ts, xs, nrec, t, x)
    return ts, xs, nrec


# -- public operations -------------------------------------------------------

def simulate_cle(network: ReactionNetwork, c, x0, t_end: float, dt_euler: float = 0.005,
                 rng=None) -> Trajectory:
    """Euler-Maruyama CLE path on [0, t_end], recorded at every step."""
    x = np.array(x0, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("initial state must be nonnegative")
    if not (t_end > 0 and dt_euler > 0):
        raise ValueError("t_end and dt_euler must be positive")
    A, rtype, ridx = network.kernel_arrays()
    counters = cm.new_counters()
    start = x.copy()
    ts, xs, n = cle_advance(x, 0.0, float(t_end), network.rates(c), A, rtype, ridx,
                            float(dt_euler), as_generator(rng), True, counters)
    meta = {"simulator": "cle", **cm.counters_dict(counters)}
    if hasattr(rng, "seed"):
        meta.update(seed=rng.seed, stream_id=rng.stream_id)
    return Trajectory(np.concatenate([[0.0], ts[:n]]), np.vstack([start[None, :], xs[:n]]),
                      meta)


def simulate_hybrid_sde(network: ReactionNetwork, c, x0, t_end: float,
                        cle_config: CleConfig | None = None,
                        hybrid_classify_config: HybridConfig | None = None,
                        rng=None) -> Trajectory:
    """CLE/Markov-jump hybrid path on [0, t_end].

    Records the state after every committed interval and every slow event.
    """
    ccfg = cle_config or CleConfig()
    hcfg = hybrid_classify_config or HybridConfig(dt_hybrid=ccfg.dt_hybrid,
                                                  dt_integrate=ccfg.dt_hybrid)
    x = np.array(x0, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("initial state must be nonnegative")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    A, rtype, ridx = network.kernel_arrays()
    counters = cm.new_counters()
    start = x.copy()
    ts, xs, n = hybrid_sde_advance(x, 0.0, float(t_end), network.rates(c), A, rtype, ridx,
                                   hcfg.kernel_params(network.n_species),
                                   ccfg.kernel_params(), as_generator(rng), True, counters)
    meta = {"simulator": "hybrid-sde", **cm.counters_dict(counters)}
    if hasattr(rng, "seed"):
        meta.update(seed=rng.seed, stream_id=rng.stream_id)
    return Trajectory(np.concatenate([[0.0], ts[:n]]), np.vstack([start[None, :], xs[:n]]),
                      meta)
