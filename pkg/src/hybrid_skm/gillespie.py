"""Exact simulation of the Markov jump process by Gillespie's direct method."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _common as cm
from .model import ReactionNetwork, Trajectory, _hazard_one
from .rng import as_generator


@dataclass(frozen=True)
class SsaConfig:
    t_end: float
    record_mode: str = "all"  # "all" events, or "grid"
    grid_dt: float = 1.0
    max_events: int = 10**8

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.record_mode not in ("all", "grid"):
            raise ValueError("record_mode must be 'all' or 'grid'")
        if self.record_mode == "grid" and not self.grid_dt > 0:
            raise ValueError("grid spacing must be positive")


@njit(cache=True, nogil=True)
def ssa_advance(x, t0, t1, c, A, rtype, ridx, rng, record, max_events, counters):
    """Advance ``x`` in place from t0 to t1; optionally record every event.

    Returns the record buffers and their fill count. Hitting ``max_events``
    sets the TRUNCATED counter and stops early.
    """
    r, k = A.shape
    h = np.empty(r)
    ts, xs = cm.new_buffer(k, record)
    n = 0
    t = t0
    events = 0
    while True:
        lam = 0.0
        for j in range(r):
            hj = _hazard_one(c[j], rtype[j], x[ridx[j, 0]], x[ridx[j, 1]])
            h[j] = hj
            lam += hj
        if lam <= 0.0:
            break
        t += rng.exponential(1.0 / lam)
        if t >= t1:
            break
        if events >= max_events:
            counters[cm.TRUNCATED] = 1
            break
        target = rng.random() * lam
        acc = 0.0
        i = -1
        for j in range(r):
            if h[j] > 0.0:
                i = j
                acc += h[j]
                if acc > target:
                    break
        for s in range(k):
            x[s] += A[i, s]
            if x[s] < 0.0:
                x[s] = 0.0
                counters[cm.CLAMPS] += 1
        events += 1
        if record:
            ts, xs, n = cm.push(ts, xs, n, t, x)
    counters[cm.EVENTS] += events
    return ts, xs, n


def simulate_gillespie(network: ReactionNetwork, c, x0, config: SsaConfig, rng) -> Trajectory:
    """Exact sample path on [0, t_end].

    In ``"all"`` mode every event is recorded; in ``"grid"`` mode only the
    states at multiples of ``grid_dt`` (and at ``t_end``). The final state is
    always present unless the event guard truncated the run.
    """
    x = np.array(x0, dtype=np.float64)
    if np.any(x < 0) or np.any(x != np.round(x)):
        raise ValueError("initial state must be nonnegative integers")
    cc = network.rates(c)
    A, rtype, ridx = network.kernel_arrays()
    gen = as_generator(rng)
    counters = cm.new_counters()
    times, states = [np.zeros(1)], [x[None].copy()]
    if config.record_mode == "all":
        ts, xs, n = ssa_advance(x, 0.0, config.t_end, cc, A, rtype, ridx, gen, True,
                                config.max_events, counters)
        times.append(ts[:n])
        states.append(xs[:n])
        if not counters[cm.TRUNCATED] and (n == 0 or ts[n - 1] < config.t_end):
            times.append(np.array([config.t_end]))
            states.append(x[None].copy())
    else:
        for t0, t1 in zip(grid_times(config.t_end, config.grid_dt)[:-1],
                          grid_times(config.t_end, config.grid_dt)[1:]):
            ssa_advance(x, t0, t1, cc, A, rtype, ridx, gen, False,
                        config.max_events - int(counters[cm.EVENTS]), counters)
            if counters[cm.TRUNCATED]:
                break
            times.append(np.array([t1]))
            states.append(x[None].copy())
    meta = {"simulator": "gillespie", "truncated": bool(counters[cm.TRUNCATED]),
            **cm.counters_dict(counters)}
    if hasattr(rng, "seed"):
        meta.update(seed=rng.seed, stream_id=rng.stream_id)
    return Trajectory(np.concatenate(times), np.concatenate(states), meta)


def grid_times(t_end: float, dt: float) -> np.ndarray:
    """0, dt, 2dt, ... up to and including t_end."""
    n = int(np.floor(t_end / dt + 1e-9))
    g = dt * np.arange(n + 1)
    if t_end - g[-1] > 1e-9 * max(1.0, t_end):
        g = np.append(g, t_end)
    else:
        g[-1] = t_end
    return g


def sample_at_grid(trajectory: Trajectory, times) -> np.ndarray:
    """Right-continuous lookup: state after the last record at or before each time.

    Returns an (m, k) array of states.
    """
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if np.any(times < 0) or np.any(times > trajectory.times[-1]):
        raise ValueError("query times must lie within the recorded span")
    idx = np.searchsorted(trajectory.times, times, side="right") - 1
    return trajectory.states[idx]
