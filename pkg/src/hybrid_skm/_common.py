"""Shared pieces of the compiled kernels: growable record buffers and counters."""

import numpy as np
from numba import njit

# Slots of the int64 counters array every kernel accepts.
EVENTS = 0
TRUNCATED = 1
RECLASSIFICATIONS = 2
BOUND_VIOLATIONS = 3
REWINDS = 4
FLOOR_FALLBACKS = 5
CLAMPS = 6
GINV_REFACTOR = 7
STIFF_FALLBACKS = 8
CANDIDATES = 9
INTERVALS = 10
N_COUNTERS = 11

COUNTER_NAMES = (
    "events", "truncated", "reclassifications", "bound_violations", "rewinds",
    "floor_fallbacks", "clamps", "ginv_refactorizations", "stiff_fallbacks",
    "thinning_candidates", "intervals",
)


def new_counters() -> np.ndarray:
    return np.zeros(N_COUNTERS, dtype=np.int64)


def counters_dict(counters) -> dict:
    return {name: int(v) for name, v in zip(COUNTER_NAMES, counters)}


@njit(cache=True)
def new_buffer(k, record):
    cap = 64 if record else 1
    return np.empty(cap), np.empty((cap, k))


@njit(cache=True)
def push(ts, xs, n, t, x):
    """Append (t, x) at row n, doubling the buffers when full."""
    if n >= ts.size:
        nts = np.empty(2 * ts.size)
        nxs = np.empty((2 * ts.size, xs.shape[1]))
        nts[:n] = ts[:n]
        nxs[:n] = xs[:n]
        ts, xs = nts, nxs
    ts[n] = t
    xs[n, :] = x
    return ts, xs, n + 1
