"""Hybrid simulation: LNA for fast reactions, thinned Markov jumps for slow ones.

Each pass of the main loop

1. classifies reactions as fast or slow from the current state (only
   after an interval closes without a candidate, or once the current
   classification is ``dt_hybrid`` old),
2. integrates the LNA of the fast subsystem over ``dt_integrate`` with slow
   rates zeroed, tracking the running maxima of the linearised slow hazard,
3. turns those maxima into a probable upper bound ``h_max`` on the total
   slow hazard,
4. proposes the next slow event from a Poisson process of rate ``h_max``
   and thins it with probability ``lambda_s(x) / h_max``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _common as cm
from .model import DIMER, ORDER0, ORDER1, ORDER2, ReactionNetwork, Trajectory, _hazards
from .ode import (OK, LnaState, OdeConfig, RunningMaxima, StiffnessError, lna_integrate,
                  make_workspace, pack_initial)
from .rng import as_generator, normal_quantile, psd_sqrt


@dataclass(frozen=True)
class HybridConfig:
    dt_hybrid: float = 0.1
    dt_integrate: float = 0.1
    N_star: float = 15.0
    eps_star: float = 0.25
    eps_hybrid: float = 0.25
    bound_eps: float = 1e-6
    ode: OdeConfig = field(default_factory=OdeConfig)
    force_all_slow: bool = False

    def __post_init__(self):
        if not (self.dt_hybrid > 0 and self.dt_integrate > 0):
            raise ValueError("time steps must be positive")
        if self.dt_integrate > self.dt_hybrid:
            raise ValueError("dt_integrate must not exceed dt_hybrid")
        if not self.N_star > 0:
            raise ValueError("N_star must be positive")
        for name in ("eps_star", "eps_hybrid", "bound_eps"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.eps_hybrid < self.eps_star / self.N_star:
            raise ValueError("eps_hybrid must be at least eps_star / N_star")

    def kernel_params(self, k: int) -> np.ndarray:
        z = -normal_quantile(self.bound_eps / (4 * k))
        return np.array([self.dt_hybrid, self.dt_integrate, self.N_star, self.eps_star,
                         self.eps_hybrid, z, 1.0 if self.force_all_slow else 0.0])


@dataclass(frozen=True)
class SlowClass:
    kind: str  # order0 | order1 | order2-one-fast | order2-two-fast
    c_star: float
    k1: int = -1
    k2: int = -1
    dimer: bool = False


@dataclass(frozen=True)
class Partition:
    fast_reactions: tuple[int, ...]
    slow_reactions: tuple[int, ...]
    fast_species: tuple[int, ...]
    slow_classes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BoundInfo:
    lambda_s_max: float
    b_max: np.ndarray
    u_star: np.ndarray
    h_s_max: float
    violation_count: int = 0


# -- compiled pieces -----------------------------------------------------------

@njit(cache=True)
def classify_kernel(x, c, A, rtype, ridx, dth, nstar, eps_star, eps_h, force_slow, h,
                    fast, fastsp):
    r, k = A.shape
    _hazards(x, c, rtype, ridx, h)
    fastsp[:] = False
    for j in range(r):
        ok = not force_slow
        if ok:
            occ = max(1.0, h[j] * dth)
            for i in range(k):
                a = abs(A[j, i])
                if a != 0.0 and (a * nstar > eps_star * x[i] or a * occ > eps_h * x[i]):
                    ok = False
                    break
        fast[j] = ok
        if ok:
            for i in range(k):
                if A[j, i] != 0.0:
                    fastsp[i] = True


@njit(cache=True)
def sample_fast(y, fidx, x, rng):
    """Overwrite the fast components of x with a draw from N(eta, G Psi G'), clamped at 0.

    ``y`` is the packed LNA vector over the fast block ``fidx``.
    """
    kf = fidx.size
    if kf == 0:
        return
    kk = kf * kf
    if kf == 1:
        var = y[1] * y[1] * y[1 + 2 * kk]
        v = y[0] + np.sqrt(max(var, 0.0)) * rng.standard_normal()
        x[fidx[0]] = v if v > 0.0 else 0.0
        return
    G = y[kf:kf + kk].reshape((kf, kf))
    Psi = y[kf + 2 * kk:kf + 3 * kk].reshape((kf, kf))
    cov = G @ Psi @ G.T
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    z = np.empty(kf)
    for a in range(kf):
        z[a] = rng.standard_normal() * np.sqrt(max(vals[a], 0.0))
    for a in range(kf):
        s = y[a]
        for b in range(kf):
            s += vecs[a, b] * z[b]
        x[fidx[a]] = s if s > 0.0 else 0.0


@njit(cache=True, nogil=True)
def hybrid_lna_advance(x, t0, t1, c, A, rtype, ridx, hp, opts, rng, record, counters):
    """Run the hybrid loop on [t0, t1], updating x in place.

    Returns (status, record times, record states, count); status is
    non-OK only when the LNA integration failed.
    """
    r, k = A.shape
    dt_h, dt_i, nstar, eps_star, eps_h, zq = hp[0], hp[1], hp[2], hp[3], hp[4], hp[5]
    force_slow = hp[6] != 0.0
    fast = np.zeros(r, dtype=np.bool_)
    fastsp = np.zeros(k, dtype=np.bool_)
    c_fast = np.zeros(r)
    c_slow = np.zeros(r)
    h = np.empty(r)
    maxima = np.zeros(1 + k)
    ws = make_workspace(r, k)
    ybuf = np.empty(2 * k + 3 * k * k)
    xfull = np.empty(k)
    fidx = np.empty(0, dtype=np.int64)
    ts, xs = cm.new_buffer(k, record)
    nrec = 0
    t = t0
    need_class = True
    t_class = t0
    any_fast = False
    eps_t = 1e-12 * max(1.0, abs(t1))
    while t1 - t > eps_t:
        dth = min(dt_h, t1 - t)
        dti = min(dt_i, t1 - t)
        if need_class:
            classify_kernel(x, c, A, rtype, ridx, dth, nstar, eps_star, eps_h, force_slow, h,
                            fast, fastsp)
            counters[cm.RECLASSIFICATIONS] += 1
            any_fast = False
            for i in range(k):
                if fastsp[i]:
                    any_fast = True
                elif x[i] != np.floor(x[i]):
                    x[i] = max(np.floor(x[i] + 0.5), 0.0)
            for j in range(r):
                c_fast[j] = c[j] if fast[j] else 0.0
                c_slow[j] = 0.0 if fast[j] else c[j]
            fidx = np.nonzero(fastsp)[0]
            t_class = t
            need_class = False
        counters[cm.INTERVALS] += 1
        if any_fast:
            kf = fidx.size
            y = ybuf[:2 * kf + 3 * kf * kf]
            pack_initial(x, fidx, y)
            for i in range(k):
                xfull[i] = x[i]
            status, _a, _b, _n = lna_integrate(y, fidx, xfull, dti, c_fast, c_slow, A, rtype,
                                               ridx, opts, True, maxima, counters, False, ws)
            if status != OK:
                return status, ts, xs, nrec
            hmax = maxima[0]
            for a in range(kf):
                tau = y[kf + 3 * kf * kf + a]
                if tau > 0.0:
                    hmax += maxima[1 + fidx[a]] * zq * np.sqrt(tau)
        else:
            y = ybuf[:0]
            hmax = _hazards(x, c_slow, rtype, ridx, h)
        tstar = np.inf
        if hmax > 0.0:
            tstar = t + rng.exponential(1.0 / hmax)
        if tstar > t + dti:
            if any_fast:
                sample_fast(y, fidx, x, rng)
            t = t + dti
            if t1 - t <= eps_t:
                t = t1
            need_class = True
            if record:
                ts, xs, nrec = cm.push(ts, xs, nrec, t, x)
            continue
        counters[cm.CANDIDATES] += 1
        if any_fast:
            pack_initial(x, fidx, y)
            for i in range(k):
                xfull[i] = x[i]
            status, _a, _b, _n = lna_integrate(y, fidx, xfull, tstar - t, c_fast, c_slow, A,
                                               rtype, ridx, opts, False, maxima, counters, False,
                                               ws)
            if status != OK:
                return status, ts, xs, nrec
            sample_fast(y, fidx, x, rng)
        lam = _hazards(x, c_slow, rtype, ridx, h)
        if lam > hmax:
            counters[cm.BOUND_VIOLATIONS] += 1
        if rng.random() * hmax < lam:
            target = rng.random() * lam
            acc = 0.0
            jsel = -1
            for j in range(r):
                if h[j] > 0.0:
                    jsel = j
                    acc += h[j]
                    if acc > target:
                        break
            for i in range(k):
                x[i] += A[jsel, i]
                if x[i] < 0.0:
                    x[i] = 0.0
                    counters[cm.CLAMPS] += 1
            counters[cm.EVENTS] += 1
            if record:
                ts, xs, nrec = cm.push(ts, xs, nrec, tstar, x)
        t = tstar
        if t - t_class >= dt_h:
            need_class = True
    return OK, ts, xs, nrec


# -- public operations -------------------------------------------------------

def classify_reactions(network: ReactionNetwork, c, x, config: HybridConfig,
                       dt_hybrid: float | None = None) -> Partition:
    """Fast/slow partition at state ``x``.

    A reaction is fast when every species it changes satisfies both
    |a| N* <= eps* x and |a| max(1, h dt_hybrid) <= eps_hybrid x. Slow
    reactions are then grouped by how many of their reactants are fast.
    """
    cc = network.rates(c)
    x = np.asarray(x, dtype=np.float64)
    A, rtype, ridx = network.kernel_arrays()
    r, k = A.shape
    fast = np.zeros(r, dtype=bool)
    fastsp = np.zeros(k, dtype=bool)
    dth = config.dt_hybrid if dt_hybrid is None else dt_hybrid
    classify_kernel(x, cc, A, rtype, ridx, dth, config.N_star, config.eps_star,
                    config.eps_hybrid, config.force_all_slow, np.empty(r), fast, fastsp)
    classes = {}
    for j in np.nonzero(~fast)[0]:
        j = int(j)
        rt, i0, i1 = rtype[j], int(ridx[j, 0]), int(ridx[j, 1])
        cj = float(cc[j])
        if rt == ORDER0:
            classes[j] = SlowClass("order0", cj)
        elif rt == ORDER1:
            classes[j] = (SlowClass("order1", cj, i0) if fastsp[i0]
                          else SlowClass("order0", cj * x[i0]))
        elif rt == ORDER2:
            f0, f1 = fastsp[i0], fastsp[i1]
            if f0 and f1:
                classes[j] = SlowClass("order2-two-fast", cj, i0, i1)
            elif f0:
                classes[j] = SlowClass("order2-one-fast", cj * x[i1], i0)
            elif f1:
                classes[j] = SlowClass("order2-one-fast", cj * x[i0], i1)
            else:
                classes[j] = SlowClass("order0", cj * x[i0] * x[i1])
        else:
            if fastsp[i0]:
                classes[j] = SlowClass("order2-two-fast", 0.5 * cj, i0, i0, dimer=True)
            else:
                xi = x[i0]
                classes[j] = SlowClass("order0", 0.5 * cj * xi * (xi - 1.0) if xi >= 1 else 0.0)
    return Partition(tuple(int(j) for j in np.nonzero(fast)[0]),
                     tuple(int(j) for j in np.nonzero(~fast)[0]),
                     tuple(int(i) for i in np.nonzero(fastsp)[0]), classes)


def slow_hazard_linearization(network: ReactionNetwork, partition: Partition, c, eta):
    """Total slow hazard at eta and its first-order coefficients b*.

    Returns ``(lambda_s, b_star)``; products of two deviations are dropped,
    so the expansion is exact unless a slow reaction has two fast reactants.
    """
    eta = np.asarray(eta, dtype=np.float64)
    lam = 0.0
    bstar = np.zeros(network.n_species)
    for cls in partition.slow_classes.values():
        cs = cls.c_star
        if cls.kind == "order0":
            lam += cs
        elif cls.kind in ("order1", "order2-one-fast"):
            lam += cs * eta[cls.k1]
            bstar[cls.k1] += cs
        elif cls.dimer:
            e = eta[cls.k1]
            lam += cs * e * (e - 1.0)
            bstar[cls.k1] += cs * (2.0 * e - 1.0)
        else:
            lam += cs * eta[cls.k1] * eta[cls.k2]
            bstar[cls.k2] += cs * eta[cls.k1]
            bstar[cls.k1] += cs * eta[cls.k2]
    return lam, bstar


def probable_bound(running_maxima: RunningMaxima, tau_at_end, bound_eps: float,
                   k: int) -> BoundInfo:
    """h_max = lambda_max + sum_i b_max_i u*_i with u*_i = -Phi^{-1}(eps/4k) sqrt(tau_i)."""
    if not 0.0 < bound_eps < 1.0:
        raise ValueError("bound_eps must lie in (0, 1)")
    tau = np.asarray(tau_at_end, dtype=np.float64)
    if np.any(tau < -1e-12):
        raise ValueError("tau must be nonnegative")
    u_star = -normal_quantile(bound_eps / (4 * k)) * np.sqrt(np.clip(tau, 0.0, None))
    b_max = np.asarray(running_maxima.b_max, dtype=np.float64)
    h = running_maxima.lambda_s_max + float(b_max @ u_star)
    return BoundInfo(running_maxima.lambda_s_max, b_max, u_star, h)


def sample_state_at(lna_state: LnaState, x_slow_fixed, rng, fast_species=None) -> np.ndarray:
    """Draw the state at the end of an LNA integration.

    Fast species come from N(eta, G Psi G') clamped at 0; the rest are
    copied from ``x_slow_fixed``. Without ``fast_species``, any species with
    zero variance is treated as slow.
    """
    G = lna_state.G
    cov = G @ lna_state.Psi @ G.T
    cov = 0.5 * (cov + cov.T)
    x = np.array(x_slow_fixed, dtype=np.float64)
    if fast_species is None:
        fast_species = np.nonzero(np.diag(cov) > 0)[0]
    idx = np.asarray(fast_species, dtype=np.int64)
    if idx.size == 0:
        return x
    sub = cov[np.ix_(idx, idx)]
    z = as_generator(rng).standard_normal(idx.size)
    x[idx] = np.maximum(lna_state.eta[idx] + psd_sqrt(sub) @ z, 0.0)
    return x


def simulate_hybrid_lna(network: ReactionNetwork, c, x0, t_end: float,
                        config: HybridConfig | None = None, rng=None) -> Trajectory:
    """Hybrid LNA/Markov-jump sample path on [0, t_end].

    States are recorded at every accepted slow event and at the end of every
    integration interval that closes without a candidate event.
    """
    cfg = config or HybridConfig()
    x = np.array(x0, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("initial state must be nonnegative")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    A, rtype, ridx = network.kernel_arrays()
    counters = cm.new_counters()
    start = x.copy()
    status, ts, xs, n = hybrid_lna_advance(x, 0.0, float(t_end), network.rates(c), A, rtype,
                                           ridx, cfg.kernel_params(network.n_species),
                                           cfg.ode.as_array(), as_generator(rng), True,
                                           counters)
    if status != OK:
        raise StiffnessError("LNA integration failed inside the hybrid simulator",
                             t=float(ts[n - 1]) if n else 0.0, state=x.copy())
    times = np.concatenate([[0.0], ts[:n]])
    states = np.vstack([start[None, :], xs[:n]])
    meta = {"simulator": "hybrid-lna", **cm.counters_dict(counters)}
    if hasattr(rng, "seed"):
        meta.update(seed=rng.seed, stream_id=rng.stream_id)
    return Trajectory(times, states, meta)
