"""Seeded random streams and the statistical kernels shared by every engine."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import ndtri

# Bump when the generator family or the seed-to-stream mapping changes.
RNG_FAMILY = "numpy.PCG64+SeedSequence(seed, spawn_key=(stream_id,))/v1"


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams with the same seed and different ids are statistically
    independent (SeedSequence spawn keys), so replicate ``i`` can always use
    stream ``i`` regardless of how replicates are scheduled.
    """

    __slots__ = ("seed", "stream_id", "generator")

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def draw_exponential(rng, rate: float) -> float:
    if not rate > 0:
        raise ValueError("exponential rate must be positive")
    return float(as_generator(rng).exponential(1.0 / rate))


def draw_poisson(rng, mean: float) -> int:
    if not mean >= 0:
        raise ValueError("Poisson mean must be nonnegative")
    return int(as_generator(rng).poisson(mean))


def draw_bernoulli(rng, p: float) -> int:
    if not 0.0 <= p <= 1.0:
        raise ValueError("Bernoulli probability must lie in [0, 1]")
    return int(as_generator(rng).random() < p)


def draw_uniform(rng) -> float:
    """Uniform on the open interval (0, 1)."""
    g = as_generator(rng)
    u = g.random()
    while u == 0.0:
        u = g.random()
    return float(u)


def draw_standard_normal(rng) -> float:
    return float(as_generator(rng).standard_normal())


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    return float(ndtri(p))


def psd_sqrt(cov: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root factor L with L L' = cov, negative eigenvalues clamped to 0."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if np.max(np.abs(cov - cov.T), initial=0.0) > sym_tol * scale:
        raise ValueError("covariance is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def draw_mv_normal(rng, mean, cov) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (mean.size, mean.size):
        raise ValueError("covariance shape does not match mean")
    if not np.any(cov):
        return mean.copy()
    z = as_generator(rng).standard_normal(mean.size)
    return mean + psd_sqrt(cov) @ z


def _autocorr(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    return acov / acov[0]


def ess(chain, return_flag: bool = False):
    """Effective sample size using Geyer's initial monotone sequence.

    A constant chain yields 1 (flag ``"degenerate"``); an antithetic chain
    whose estimate exceeds ``n`` is clamped to ``n`` (flag ``"clamped"``).
    """
    x = np.asarray(chain, dtype=np.float64).ravel()
    n = x.size
    if n < 10:
        raise ValueError("ESS needs a chain of length >= 10")
    flag = None
    if np.ptp(x) == 0.0:
        out, flag = 1.0, "degenerate"
        return (out, flag) if return_flag else out
    rho = _autocorr(x)
    npairs = n // 2
    gamma = rho[0:2 * npairs:2] + rho[1:2 * npairs:2]
    # initial positive sequence, then enforce monotone decrease
    neg = np.nonzero(gamma <= 0.0)[0]
    m = neg[0] if neg.size else npairs
    if m == 0:
        tau = -1.0 + 2.0 * max(gamma[0], 0.0)
    else:
        g = np.minimum.accumulate(gamma[:m])
        tau = -1.0 + 2.0 * g.sum()
    out = n / tau if tau > 0 else np.inf
    if out > n:
        out, flag = float(n), "clamped"
    return (float(out), flag) if return_flag else float(out)


def warn(msg: str):
    warnings.warn(msg, RuntimeWarning, stacklevel=3)
