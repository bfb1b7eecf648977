"""Adaptive integration of the linear noise approximation.

The integrated vector packs, for k species,

    eta (k) | G (k*k) | G^{-1} (k*k) | Psi (k*k) | tau (k)

with matrices stored row-major. Only reactions with a nonzero entry in the
rate vector passed to the kernel drive the system, which is how slow
reactions are switched off during a hybrid interval.

The default integrator is the Dormand-Prince 5(4) pair with PI step-size
control. If its step collapses (or it burns through its step budget) the
remainder of the interval is integrated with a two-stage Rosenbrock method
(ROS2) using a finite-difference Jacobian.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _common as cm
from .model import ReactionNetwork, _hazard_d, _hazard_grad, _hazards

OK, STIFF_FAILURE = 0, 1

GINV_DRIFT_TOL = 1e-6
STEP_BUDGET = 20000


class StiffnessError(RuntimeError):
    """Step size underflow in both the explicit and the implicit integrator."""

    def __init__(self, msg, t=None, state=None):
        super().__init__(msg)
        self.t = t
        self.state = state


@dataclass(frozen=True)
class OdeConfig:
    rel_tol: float = 1e-4
    abs_tol: float = 1e-4
    max_step: float = np.inf
    dense_grid: int = 32
    force_stiff: bool = False

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.dense_grid < 0:
            raise ValueError("dense_grid must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.rel_tol, self.abs_tol, self.max_step, self.dense_grid,
                         1.0 if self.force_stiff else 0.0])


@dataclass
class LnaState:
    t: float
    eta: np.ndarray
    G: np.ndarray
    Ginv: np.ndarray
    Psi: np.ndarray
    tau: np.ndarray

    @classmethod
    def initial(cls, x, t: float = 0.0) -> "LnaState":
        x = np.asarray(x, dtype=np.float64)
        k = x.size
        return cls(t, x.copy(), np.eye(k), np.eye(k), np.zeros((k, k)), np.zeros(k))

    @classmethod
    def from_vector(cls, t, y, k) -> "LnaState":
        kk = k * k
        return cls(t, y[:k].copy(), y[k:k + kk].reshape(k, k).copy(),
                   y[k + kk:k + 2 * kk].reshape(k, k).copy(),
                   y[k + 2 * kk:k + 3 * kk].reshape(k, k).copy(), y[k + 3 * kk:].copy())


@dataclass
class RunningMaxima:
    lambda_s_max: float
    b_max: np.ndarray


@dataclass
class DenseRecord:
    times: np.ndarray
    states: np.ndarray  # rows are packed LNA vectors
    k: int

    def header(self) -> list[str]:
        k = self.k
        cols = ["t"] + [f"eta_{i + 1}" for i in range(k)]
        cols += [f"G_{i + 1}{j + 1}" for i in range(k) for j in range(k)]
        cols += [f"Psi_{i + 1}{j + 1}" for i in range(k) for j in range(k)]
        cols += [f"tau_{i + 1}" for i in range(k)]
        return cols

    def rows(self) -> np.ndarray:
        k, kk = self.k, self.k * self.k
        s = self.states
        return np.column_stack([self.times, s[:, :k + kk], s[:, k + 2 * kk:]])


# -- compiled kernels ----------------------------------------------------------
#
# The kernels integrate the LNA restricted to the fast species ``fidx``
# (length kf); slow species keep their values in ``xfull``. For the slow
# rows G is the identity and Psi vanishes, so the restriction is exact and
# the packed vector has length 2 kf + 3 kf^2. Passing every species as fast
# gives the full k-dimensional system.

N_WORK_ROWS = 10


def packed_size(kf: int) -> int:
    return 2 * kf + 3 * kf * kf


@njit(cache=True)
def make_workspace(r, k):
    n = 2 * k + 3 * k * k
    return (np.empty((N_WORK_ROWS, n)), np.empty((k, k)), np.empty((k, k)), np.empty((k, k)),
            np.empty(k), np.empty(k), np.empty(k, dtype=np.int64), np.empty(r, dtype=np.int64))


@njit(cache=True, inline="always")
def pack_initial(x, fidx, y):
    kf = fidx.size
    y[:2 * kf + 3 * kf * kf] = 0.0
    for a in range(kf):
        y[a] = x[fidx[a]]
        y[kf + a * kf + a] = 1.0
        y[kf + kf * kf + a * kf + a] = 1.0


@njit(cache=True)
def drift_jac_diff(eta, c, A, rtype, ridx, h, grad, alpha, F, S):
    """alpha = A'h, F = A' dh/dx, S = A' diag(h) A at eta, over all species."""
    r, k = A.shape
    _hazards(eta, c, rtype, ridx, h)
    _hazard_grad(eta, c, rtype, ridx, grad)
    alpha[:] = 0.0
    F[:, :] = 0.0
    S[:, :] = 0.0
    for q in range(r):
        if c[q] == 0.0:
            continue
        hq = h[q]
        for s in range(k):
            a = A[q, s]
            if a == 0.0:
                continue
            alpha[s] += a * hq
            for j in range(k):
                F[s, j] += a * grad[q, j]
                S[s, j] += a * hq * A[q, j]


@njit(cache=True, inline="always")
def lna_rhs(y, fidx, fpos, xfull, c, A, rtype, ridx, dy, F, S, tmp):
    r = A.shape[0]
    kf = fidx.size
    kk = kf * kf
    oG, oGi, oP, oT = kf, kf + kk, kf + 2 * kk, kf + 3 * kk
    for a in range(kf):
        xfull[fidx[a]] = y[a]
        dy[a] = 0.0
        for b in range(kf):
            F[a, b] = 0.0
            S[a, b] = 0.0
    for q in range(r):
        if c[q] == 0.0:
            continue
        i0 = ridx[q, 0]
        i1 = ridx[q, 1]
        hq, d0, d1 = _hazard_d(c[q], rtype[q], xfull[i0], xfull[i1])
        p0 = fpos[i0] if i0 >= 0 else -1
        p1 = fpos[i1] if i1 >= 0 else -1
        for a in range(kf):
            aa = A[q, fidx[a]]
            if aa == 0.0:
                continue
            dy[a] += aa * hq
            if p0 >= 0:
                F[a, p0] += aa * d0
            if p1 >= 0:
                F[a, p1] += aa * d1
            for b in range(kf):
                S[a, b] += aa * hq * A[q, fidx[b]]
    for i in range(kf):
        for j in range(kf):
            s1 = 0.0
            s2 = 0.0
            s3 = 0.0
            for m in range(kf):
                s1 += F[i, m] * y[oG + m * kf + j]
                s2 -= y[oGi + i * kf + m] * F[m, j]
                s3 += y[oGi + i * kf + m] * S[m, j]
            dy[oG + i * kf + j] = s1
            dy[oGi + i * kf + j] = s2
            tmp[i, j] = s3
    for i in range(kf):
        for j in range(kf):
            s = 0.0
            for m in range(kf):
                s += tmp[i, m] * y[oGi + j * kf + m]
            dy[oP + i * kf + j] = s
        dy[oT + i] = dy[oP + i * kf + i]


@njit(cache=True, inline="always")
def slow_lambda_b(y, fidx, fpos, xfull, c_slow, rtype, ridx, bstar, b):
    """lambda^s(eta) and b = G' b*(eta) (fast components only) for rates c_slow."""
    kf = fidx.size
    for a in range(kf):
        xfull[fidx[a]] = y[a]
        bstar[a] = 0.0
    lam = 0.0
    for q in range(c_slow.size):
        if c_slow[q] == 0.0:
            continue
        i0 = ridx[q, 0]
        i1 = ridx[q, 1]
        hq, d0, d1 = _hazard_d(c_slow[q], rtype[q], xfull[i0], xfull[i1])
        lam += hq
        if i0 >= 0 and fpos[i0] >= 0:
            bstar[fpos[i0]] += d0
        if i1 >= 0 and fpos[i1] >= 0:
            bstar[fpos[i1]] += d1
    for a in range(kf):
        s = 0.0
        for m in range(kf):
            s += y[kf + m * kf + a] * bstar[m]
        b[a] = s
    return lam


@njit(cache=True, inline="always")
def _update_maxima(y, fidx, fpos, xfull, c_slow, rtype, ridx, bstar, b, maxima):
    lam = slow_lambda_b(y, fidx, fpos, xfull, c_slow, rtype, ridx, bstar, b)
    if lam > maxima[0]:
        maxima[0] = lam
    for a in range(fidx.size):
        v = abs(b[a])
        if v > maxima[1 + fidx[a]]:
            maxima[1 + fidx[a]] = v


@njit(cache=True, inline="always")
def _err_norm(err, y0, y1, n, rtol, atol):
    s = 0.0
    for i in range(n):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        e = err[i] / sc
        s += e * e
    return np.sqrt(s / n)


@njit(cache=True)
def _ginv_refactor(y, kf):
    kk = kf * kf
    G = np.empty((kf, kf))
    for i in range(kf):
        for j in range(kf):
            G[i, j] = y[kf + i * kf + j]
    inv = np.linalg.inv(G)
    for i in range(kf):
        for j in range(kf):
            y[kf + kk + i * kf + j] = inv[i, j]


@njit(cache=True, inline="always")
def _ginv_check(y, kf, counters):
    kk = kf * kf
    drift = 0.0
    for i in range(kf):
        for j in range(kf):
            s = 0.0
            for m in range(kf):
                s += y[kf + i * kf + m] * y[kf + kk + m * kf + j]
            if i == j:
                s -= 1.0
            drift = max(drift, abs(s))
    if drift > GINV_DRIFT_TOL:
        _ginv_refactor(y, kf)
        counters[cm.GINV_REFACTOR] += 1


@njit(cache=True, inline="always")
def _dense_points(y0, f0, tn, h, y1, f1, gnext, gstep, ngrid, npart, fidx, fpos, xfull,
                  c_slow, rtype, ridx, bstar, b, maxima, yi):
    """Hermite-interpolate eta and G at the grid points inside [tn, tn + h]."""
    while gnext <= ngrid:
        tg = gnext * gstep
        if tg > tn + h:
            break
        th = (tg - tn) / h
        th2 = th * th
        th3 = th2 * th
        h00 = 2 * th3 - 3 * th2 + 1
        h10 = (th3 - 2 * th2 + th) * h
        h01 = -2 * th3 + 3 * th2
        h11 = (th3 - th2) * h
        for i in range(npart):
            yi[i] = h00 * y0[i] + h10 * f0[i] + h01 * y1[i] + h11 * f1[i]
        _update_maxima(yi, fidx, fpos, xfull, c_slow, rtype, ridx, bstar, b, maxima)
        gnext += 1
    return gnext


# Dormand-Prince 5(4): stage matrix (row 6 holds the 5th-order weights, so the
# last stage is evaluated at the new point) and error weights.
_DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525,
                  -1 / 40])

# workspace rows
_YS, _Y1, _YI = 7, 8, 9


@njit(cache=True, nogil=True)
def lna_integrate(y, fidx, xfull, dt, c, c_slow, A, rtype, ridx, opts, track, maxima,
                  counters, dense, ws):
    """Integrate the packed LNA vector ``y`` in place over [0, dt].

    With ``track`` set, ``maxima`` (length 1 + k) receives max lambda^s(eta)
    and max |b_i| over the start point, every accepted step and ``opts[3]``
    equispaced interior points. ``xfull`` supplies the slow species and is
    scratch for the fast ones. Returns (status, dense times, dense rows, count).

    The right-hand side and the maxima update are written out here rather
    than calling lna_rhs / slow_lambda_b: per-call array bookkeeping costs
    more than the arithmetic at this size.
    """
    W, F, S, tmp, bstar, b, fpos, sidx = ws
    r = A.shape[0]
    ns = 0
    for q in range(r):
        if c_slow[q] != 0.0:
            sidx[ns] = q
            ns += 1
    kf = fidx.size
    kk = kf * kf
    oG, oGi, oP, oT = kf, kf + kk, kf + 2 * kk, kf + 3 * kk
    n = 2 * kf + 3 * kk
    npart = kf + kk
    for i in range(fpos.size):
        fpos[i] = -1
    for a in range(kf):
        fpos[fidx[a]] = a
    rtol, atol, max_step = opts[0], opts[1], opts[2]
    ngrid = int(opts[3])
    dts = np.empty(64 if dense else 1)
    dys = np.empty((64 if dense else 1, n))
    nd = 0
    if dense:
        dts, dys, nd = cm.push(dts, dys, nd, 0.0, y[:n])
    if track:
        for i in range(maxima.size):
            maxima[i] = 0.0
    need_start = track
    gstep = dt / (ngrid + 1)
    gnext = 1

    t = 0.0
    hmax = min(max_step, dt)
    hstep = hmax
    err_prev = 1e-4
    have_f0 = False
    steps = 0
    stiff = opts[4] != 0.0
    while t < dt and not stiff:
        if hstep > dt - t:
            hstep = dt - t
        for st in range(7):
            if st == 0:
                if have_f0:
                    continue
                for i in range(n):
                    W[_YS, i] = y[i]
            else:
                for i in range(n):
                    acc = 0.0
                    for j in range(st):
                        acc += _DP_A[st, j] * W[j, i]
                    W[_YS, i] = y[i] + hstep * acc
            # right-hand side at W[_YS] into W[st]
            for a in range(kf):
                xfull[fidx[a]] = W[_YS, a]
                W[st, a] = 0.0
                for bb in range(kf):
                    F[a, bb] = 0.0
                    S[a, bb] = 0.0
            for q in range(r):
                if c[q] == 0.0:
                    continue
                i0 = ridx[q, 0]
                i1 = ridx[q, 1]
                hq, d0, d1 = _hazard_d(c[q], rtype[q], xfull[i0], xfull[i1])
                p0 = fpos[i0] if i0 >= 0 else -1
                p1 = fpos[i1] if i1 >= 0 else -1
                for a in range(kf):
                    aa = A[q, fidx[a]]
                    if aa == 0.0:
                        continue
                    W[st, a] += aa * hq
                    if p0 >= 0:
                        F[a, p0] += aa * d0
                    if p1 >= 0:
                        F[a, p1] += aa * d1
                    for bb in range(kf):
                        S[a, bb] += aa * hq * A[q, fidx[bb]]
            for i in range(kf):
                for j in range(kf):
                    s1 = 0.0
                    s2 = 0.0
                    s3 = 0.0
                    for m in range(kf):
                        s1 += F[i, m] * W[_YS, oG + m * kf + j]
                        s2 -= W[_YS, oGi + i * kf + m] * F[m, j]
                        s3 += W[_YS, oGi + i * kf + m] * S[m, j]
                    W[st, oG + i * kf + j] = s1
                    W[st, oGi + i * kf + j] = s2
                    tmp[i, j] = s3
            for i in range(kf):
                for j in range(kf):
                    s4 = 0.0
                    for m in range(kf):
                        s4 += tmp[i, m] * W[_YS, oGi + j * kf + m]
                    W[st, oP + i * kf + j] = s4
                W[st, oT + i] = W[st, oP + i * kf + i]
        have_f0 = True
        # W[_YS] now holds the 5th-order solution and W[6] its derivative
        en = 0.0
        for i in range(n):
            e = 0.0
            for j in range(7):
                e += _DP_E[j] * W[j, i]
            sc = atol + rtol * max(abs(y[i]), abs(W[_YS, i]))
            e = hstep * e / sc
            en += e * e
        en = np.sqrt(en / n)
        steps += 1
        if en <= 1.0:
            if track:
                # start point (once), interior grid points in the step, end point
                first = need_start
                need_start = False
                while True:
                    last = False
                    if first:
                        for i in range(npart):
                            W[_YI, i] = y[i]
                        first = False
                    elif gnext <= ngrid and gnext * gstep <= t + hstep:
                        th = (gnext * gstep - t) / hstep
                        th2 = th * th
                        th3 = th2 * th
                        h00 = 2 * th3 - 3 * th2 + 1
                        h10 = (th3 - 2 * th2 + th) * hstep
                        h01 = -2 * th3 + 3 * th2
                        h11 = (th3 - th2) * hstep
                        for i in range(npart):
                            W[_YI, i] = (h00 * y[i] + h10 * W[0, i] + h01 * W[_YS, i]
                                         + h11 * W[6, i])
                        gnext += 1
                    else:
                        for i in range(npart):
                            W[_YI, i] = W[_YS, i]
                        last = True
                    # lambda^s and b = G' b* at W[_YI]
                    for a in range(kf):
                        xfull[fidx[a]] = W[_YI, a]
                        bstar[a] = 0.0
                    lam = 0.0
                    for qq in range(ns):
                        q = sidx[qq]
                        i0 = ridx[q, 0]
                        i1 = ridx[q, 1]
                        hq, d0, d1 = _hazard_d(c_slow[q], rtype[q], xfull[i0], xfull[i1])
                        lam += hq
                        if i0 >= 0 and fpos[i0] >= 0:
                            bstar[fpos[i0]] += d0
                        if i1 >= 0 and fpos[i1] >= 0:
                            bstar[fpos[i1]] += d1
                    if lam > maxima[0]:
                        maxima[0] = lam
                    for a in range(kf):
                        s5 = 0.0
                        for m in range(kf):
                            s5 += W[_YI, kf + m * kf + a] * bstar[m]
                        s5 = abs(s5)
                        if s5 > maxima[1 + fidx[a]]:
                            maxima[1 + fidx[a]] = s5
                    if last:
                        break
            t = t + hstep
            if dt - t <= 1e-12 * dt:
                t = dt
            for i in range(n):
                y[i] = W[_YS, i]
                W[0, i] = W[6, i]
            _ginv_check(y, kf, counters)
            if dense:
                dts, dys, nd = cm.push(dts, dys, nd, t, y[:n])
            fac = 0.9 * max(en, 1e-10) ** (-0.7 / 5) * err_prev ** (0.4 / 5)
            fac = min(5.0, max(0.2, fac))
            err_prev = max(en, 1e-4)
            hstep = min(hmax, hstep * fac)
        else:
            hstep *= max(0.2, 0.9 * en ** (-1 / 5))
        if t < dt and (hstep < 1e-6 * hmax or steps > STEP_BUDGET):
            stiff = True

    if t < dt:
        counters[cm.STIFF_FALLBACKS] += 1
        if need_start:
            _update_maxima(y, fidx, fpos, xfull, c_slow, rtype, ridx, bstar, b, maxima)
        status, gnext, dts, dys, nd = _rosenbrock(y, fidx, xfull, t, dt, c, c_slow, A, rtype,
                                                  ridx, rtol, atol, hmax, track, maxima,
                                                  counters, dense, dts, dys, nd, gnext,
                                                  gstep, ngrid, ws)
        if status != OK:
            return status, dts, dys, nd
    return OK, dts, dys, nd


@njit(cache=True)
def _rosenbrock(y, fidx, xfull, t, dt, c, c_slow, A, rtype, ridx, rtol, atol, hmax, track,
                maxima, counters, dense, dts, dys, nd, gnext, gstep, ngrid, ws):
    """ROS2 (L-stable, order 2) with an embedded first-order error estimate."""
    W, F, S, tmp, bstar, b, fpos = ws[:7]
    kf = fidx.size
    n = 2 * kf + 3 * kf * kf
    npart = kf + kf * kf
    gam = 1.0 + 1.0 / np.sqrt(2.0)
    f0, f1, fp, yp, ys, y1, yi = W[0, :n], W[1, :n], W[2, :n], W[3, :n], W[4, :n], W[5, :n], W[6]
    J = np.empty((n, n))
    hstep = min(hmax, dt - t)
    hmin = 1e-12 * dt
    while t < dt:
        if hstep > dt - t:
            hstep = dt - t
        lna_rhs(y, fidx, fpos, xfull, c, A, rtype, ridx, f0, F, S, tmp)
        for j in range(n):
            d = 1e-7 * max(1.0, abs(y[j]))
            yp[:] = y[:n]
            yp[j] += d
            lna_rhs(yp, fidx, fpos, xfull, c, A, rtype, ridx, fp, F, S, tmp)
            for i in range(n):
                J[i, j] = (fp[i] - f0[i]) / d
        M = -gam * hstep * J
        for i in range(n):
            M[i, i] += 1.0
        ka = np.linalg.solve(M, f0.copy())
        for i in range(n):
            ys[i] = y[i] + hstep * ka[i]
        lna_rhs(ys, fidx, fpos, xfull, c, A, rtype, ridx, fp, F, S, tmp)
        kb = np.linalg.solve(M, fp - 2.0 * ka)
        for i in range(n):
            y1[i] = y[i] + hstep * (1.5 * ka[i] + 0.5 * kb[i])
        en = _err_norm(0.5 * hstep * (ka + kb), y, y1, n, rtol, atol)
        if en <= 1.0:
            lna_rhs(y1, fidx, fpos, xfull, c, A, rtype, ridx, f1, F, S, tmp)
            if track:
                gnext = _dense_points(y, f0, t, hstep, y1, f1, gnext, gstep, ngrid, npart,
                                      fidx, fpos, xfull, c_slow, rtype, ridx, bstar, b,
                                      maxima, yi)
            t += hstep
            if dt - t <= 1e-12 * dt:
                t = dt
            y[:n] = y1
            _ginv_check(y, kf, counters)
            if track:
                _update_maxima(y, fidx, fpos, xfull, c_slow, rtype, ridx, bstar, b, maxima)
            if dense:
                dts, dys, nd = cm.push(dts, dys, nd, t, y[:n])
        hstep = min(hmax, hstep * min(5.0, max(0.2, 0.9 * max(en, 1e-10) ** -0.5)))
        if t < dt and hstep < hmin:
            return STIFF_FAILURE, gnext, dts, dys, nd
    return OK, gnext, dts, dys, nd


# -- public operations -------------------------------------------------------

def _rate_split(network: ReactionNetwork, partition, c):
    """(c_fast, c_slow, fast-species mask) for a partition; None means all fast."""
    cc = network.rates(c)
    if partition is None:
        fast = np.ones(network.n_reactions, dtype=bool)
    else:
        fast = np.zeros(network.n_reactions, dtype=bool)
        fast[list(partition.fast_reactions)] = True
    c_fast = np.where(fast, cc, 0.0)
    c_slow = np.where(fast, 0.0, cc)
    fastsp = np.any(network.net_effect[fast] != 0, axis=0)
    return c_fast, c_slow, fastsp


def drift_and_jacobian(network: ReactionNetwork, partition, c, eta):
    """Drift alpha = A_f' h_f(eta) and its exact Jacobian F at eta."""
    c_fast, _, _ = _rate_split(network, partition, c)
    A, rtype, ridx = network.kernel_arrays()
    r, k = A.shape
    alpha, F, S = np.empty(k), np.empty((k, k)), np.empty((k, k))
    drift_jac_diff(np.asarray(eta, dtype=np.float64), c_fast, A, rtype, ridx, np.empty(r),
                   np.empty((r, k)), alpha, F, S)
    return alpha, F


def diffusion_matrix(network: ReactionNetwork, partition, c, eta) -> np.ndarray:
    """A square root beta of A_f' diag(h_f(eta)) A_f (symmetric PSD root)."""
    c_fast, _, _ = _rate_split(network, partition, c)
    A, rtype, ridx = network.kernel_arrays()
    r, k = A.shape
    alpha, F, S = np.empty(k), np.empty((k, k)), np.empty((k, k))
    drift_jac_diff(np.asarray(eta, dtype=np.float64), c_fast, A, rtype, ridx, np.empty(r),
                   np.empty((r, k)), alpha, F, S)
    return _sym_sqrt(S)


def _sym_sqrt(S):
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def integrate_lna(network: ReactionNetwork, partition, c, x_curr, dt: float,
                  ode_config: OdeConfig | None = None):
    """Integrate eta, G, G^{-1}, Psi and tau over [0, dt] from x_curr.

    Slow reactions (per ``partition``; ``None`` = all reactions fast) have
    their rates set to zero. Returns ``(LnaState, DenseRecord, RunningMaxima)``.

    Raises
    ------
    StiffnessError
        If the step size underflows in the implicit fallback as well.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = ode_config or OdeConfig()
    c_fast, c_slow, fastsp = _rate_split(network, partition, c)
    A, rtype, ridx = network.kernel_arrays()
    k = network.n_species
    x = np.asarray(x_curr, dtype=np.float64)
    fidx = np.flatnonzero(fastsp).astype(np.int64)
    kf = fidx.size
    if kf == 0:
        # nothing moves: the slow hazard is constant and there is no noise
        lam = float(_hazards(x, c_slow, rtype, ridx, np.empty(A.shape[0])))
        y0 = expand_packed(np.empty(0), fidx, x)
        return (LnaState.from_vector(float(dt), y0, k),
                DenseRecord(np.array([0.0, float(dt)]), np.vstack([y0, y0]), k),
                RunningMaxima(lam, np.zeros(k)))
    y = np.empty(packed_size(kf))
    pack_initial(x, fidx, y)
    maxima = np.zeros(1 + k)
    counters = cm.new_counters()
    ws = make_workspace(A.shape[0], k)
    status, dts, dys, nd = lna_integrate(y, fidx, x.copy(), float(dt), c_fast, c_slow, A,
                                         rtype, ridx, cfg.as_array(), True, maxima, counters,
                                         True, ws)
    if status != OK:
        raise StiffnessError("step size underflow integrating the LNA", t=None,
                             state=expand_packed(y, fidx, x))
    if counters[cm.GINV_REFACTOR]:
        warnings.warn(f"G^-1 drift exceeded {GINV_DRIFT_TOL}; re-inverted G "
                      f"{counters[cm.GINV_REFACTOR]} times", RuntimeWarning, stacklevel=2)
    state = LnaState.from_vector(float(dt), expand_packed(y, fidx, x), k)
    rows = np.array([expand_packed(r, fidx, x) for r in dys[:nd]]).reshape(nd, packed_size(k))
    dense = DenseRecord(dts[:nd].copy(), rows, k)
    return state, dense, RunningMaxima(float(maxima[0]), maxima[1:].copy())


def expand_packed(yf, fidx, x) -> np.ndarray:
    """Embed a fast-block packed vector into the full k-species layout."""
    k = x.size
    kf = fidx.size
    kk, ff = k * k, kf * kf
    st = LnaState.initial(x)
    blocks = [st.G, st.Ginv, st.Psi]
    st.eta[fidx] = yf[:kf]
    for m, B in enumerate(blocks):
        B[np.ix_(fidx, fidx)] = yf[kf + m * ff:kf + (m + 1) * ff].reshape(kf, kf)
    st.tau[fidx] = yf[kf + 3 * ff:2 * kf + 3 * ff]
    return np.concatenate([st.eta, st.G.ravel(), st.Ginv.ravel(), st.Psi.ravel(), st.tau])[
        :2 * k + 3 * kk]


def gaussian_at(lna_state: LnaState):
    """Mean eta(t) and covariance G Psi G' (symmetrised) of X(t)."""
    G = lna_state.G
    cov = G @ lna_state.Psi @ G.T
    return lna_state.eta.copy(), 0.5 * (cov + cov.T)
