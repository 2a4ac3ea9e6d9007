"""Compiled per-trajectory solver for the classical drift of the SABR-type models.

Along the classical drift the volatility factors follow a closed-form path
``y_i(t)``, so only the prices need a numerical solve:

    x_i' = -a_i^2 beta_i / 2 * y_i^(2 alpha_i) x_i^(2 beta_i - 1) - c_i / 2 * y_i^alpha_i x_i^beta_i

with zero absorbing. The step control is the one of :func:`nvsplit.ode.integrate`
(RK4 with step doubling, local extrapolation, max-norm error over the
assets), run column by column without temporaries.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK, BUDGET, UNDERFLOW, NONFINITE = 0, 1, 2, 3


@njit(cache=True, inline="always")
def _level_powers(t, h, y0, rate, target, alpha, p0, p1, p2, p3, p4):
    # y^alpha at t, t + h/4, ..., t + h; the decay factors are chained
    for i in range(y0.shape[0]):
        e = math.exp(-rate[i] * t)
        q = math.exp(-0.25 * rate[i] * h)
        d = y0[i] - target[i]
        p0[i] = math.exp(alpha[i] * math.log(d * e + target[i]))
        e *= q
        p1[i] = math.exp(alpha[i] * math.log(d * e + target[i]))
        e *= q
        p2[i] = math.exp(alpha[i] * math.log(d * e + target[i]))
        e *= q
        p3[i] = math.exp(alpha[i] * math.log(d * e + target[i]))
        e *= q
        p4[i] = math.exp(alpha[i] * math.log(d * e + target[i]))


@njit(cache=True, inline="always")
def _rhs(x, ya, a, beta, cross, out):
    for i in range(x.shape[0]):
        if x[i] > 0.0:
            w = ya[i] * math.exp(beta[i] * math.log(x[i]))
            out[i] = -0.5 * w * (a[i] * a[i] * beta[i] * w / x[i] + cross[i])
        else:
            out[i] = 0.0


@njit(cache=True)
def _rk4(x, h, k1, ya0, yah, ya1, a, beta, cross, k2, k3, k4, tmp, out):
    # k1 is the slope at the start; ya0/yah/ya1 are the level powers at the start, midpoint and end
    n = x.shape[0]
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    _rhs(tmp, yah, a, beta, cross, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    _rhs(tmp, yah, a, beta, cross, k3)
    for i in range(n):
        tmp[i] = x[i] + h * k3[i]
    _rhs(tmp, ya1, a, beta, cross, k4)
    for i in range(n):
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def _finish(x0, y0, s, t0, h0, steps0, a, alpha, beta, rate, target, cross, rel_tol, abs_tol, max_steps, min_step,
            max_step):
    """Continue every column of ``x0`` (shape ``(n, m)``) from time ``t0`` with
    trial step ``h0`` up to ``s``.

    Returns ``(x, status, column)``; ``status`` is non-zero when a column
    failed and ``column`` names the first such column.
    """
    n, m = x0.shape
    out = x0.copy()
    x = np.empty(n)
    yc = np.empty(n)
    one = np.empty(n)
    mid = np.empty(n)
    two = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    k0 = np.empty(n)
    km = np.empty(n)
    p0 = np.empty(n)
    p1 = np.empty(n)
    p2 = np.empty(n)
    p3 = np.empty(n)
    p4 = np.empty(n)
    for c in range(m):
        end = s[c]
        if end <= 0.0:
            continue
        for i in range(n):
            x[i] = x0[i, c]
            yc[i] = y0[i, c]
        t = t0[c]
        h = h0[c]
        steps = steps0
        while t < end:
            steps += 1
            if steps > max_steps:
                return out, BUDGET, c
            remaining = end - t
            hi = min(h, remaining)
            _level_powers(t, hi, yc, rate, target, alpha, p0, p1, p2, p3, p4)
            _rhs(x, p0, a, beta, cross, k0)
            _rk4(x, hi, k0, p0, p2, p4, a, beta, cross, k2, k3, k4, tmp, one)
            _rk4(x, 0.5 * hi, k0, p0, p1, p2, a, beta, cross, k2, k3, k4, tmp, mid)
            _rhs(mid, p2, a, beta, cross, km)
            _rk4(mid, 0.5 * hi, km, p2, p3, p4, a, beta, cross, k2, k3, k4, tmp, two)
            err = 0.0
            finite = True
            for i in range(n):
                if not (math.isfinite(one[i]) and math.isfinite(two[i])):
                    finite = False
                scale = abs_tol + rel_tol * max(abs(x[i]), abs(two[i]))
                err = max(err, abs(two[i] - one[i]) / scale)
            err /= 15.0
            if not math.isfinite(err):
                finite = False
            if finite and err <= 1.0:
                for i in range(n):
                    x[i] = two[i] + (two[i] - one[i]) / 15.0
                t = end if hi == remaining else t + hi
                h = hi * min(max(0.9 * err ** -0.2, 0.2), 4.0) if err > 0.0 else hi * 4.0
                h = min(h, max_step)
            else:
                if finite:
                    h = hi * min(max(0.9 * err ** -0.2, 0.1), 0.5)
                else:
                    h = hi * 0.5
                if h < min_step:
                    return out, NONFINITE if not finite else UNDERFLOW, c
        for i in range(n):
            out[i, c] = x[i]
    return out, OK, 0


def _level_powers_np(t, h, y0, rate, target, alpha):
    e = np.exp(-rate * t)
    q = np.exp(-0.25 * rate * h)
    d = y0 - target
    out = []
    for _ in range(5):
        out.append(np.exp(alpha * np.log(d * e + target)))
        e = e * q
    return out


def _rhs_np(x, ya, a, beta, cross):
    pos = x > 0
    xp = np.where(pos, x, 1.0)
    w = ya * np.exp(beta * np.log(xp))
    return np.where(pos, -0.5 * w * (a * a * beta * w / xp + cross), 0.0)


def _rk4_np(x, h, k1, yah, ya1, a, beta, cross):
    k2 = _rhs_np(x + 0.5 * h * k1, yah, a, beta, cross)
    k3 = _rhs_np(x + 0.5 * h * k2, yah, a, beta, cross)
    k4 = _rhs_np(x + h * k3, ya1, a, beta, cross)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def price_drift_flow(x0, y0, s, a, alpha, beta, rate, target, cross, rel_tol, abs_tol, max_steps, min_step,
                     max_step=np.inf, rounds: int = 1, tail: int = 512):
    """Solve every column of ``x0`` (shape ``(n, m)``) up to ``s[col]``.

    The first ``rounds`` steps are taken for all unfinished columns at once
    with vectorized arithmetic (while more than ``tail`` remain); the rest are
    finished one by one in compiled code. Returns ``(x, status, column)``.
    """
    x = np.array(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    n, m = x.shape
    params = [np.asarray(v, dtype=float)[:, None] for v in (a, alpha, beta, rate, target, cross)]
    pa, palpha, pbeta, prate, ptarget, pcross = params
    end = np.array(np.broadcast_to(np.asarray(s, dtype=float), (m,)))
    t = np.zeros(m)
    h = np.minimum(end, max_step)
    idx = np.flatnonzero(end > 0)
    steps = 0
    while idx.size > tail and steps < rounds:
        steps += 1
        if steps > max_steps:
            return x, BUDGET, int(idx[0])
        xi, yi, ti = x[:, idx], y0[:, idx], t[idx]
        remaining = end[idx] - ti
        hi = np.minimum(h[idx], remaining)
        with np.errstate(all="ignore"):
            p0, p1, p2, p3, p4 = _level_powers_np(ti, hi, yi, prate, ptarget, palpha)
            k0 = _rhs_np(xi, p0, pa, pbeta, pcross)
            one = _rk4_np(xi, hi, k0, p2, p4, pa, pbeta, pcross)
            mid = _rk4_np(xi, 0.5 * hi, k0, p1, p2, pa, pbeta, pcross)
            two = _rk4_np(mid, 0.5 * hi, _rhs_np(mid, p2, pa, pbeta, pcross), p3, p4, pa, pbeta, pcross)
            diff = two - one
            scale = abs_tol + rel_tol * np.maximum(np.abs(xi), np.abs(two))
            err = np.max(np.abs(diff) / scale, axis=0) / 15.0
            finite = np.all(np.isfinite(one), axis=0) & np.all(np.isfinite(two), axis=0) & np.isfinite(err)
            ok = finite & (err <= 1.0)
            grow = np.clip(0.9 * err ** -0.2, 0.2, 4.0)
            shrink = np.clip(0.9 * err ** -0.2, 0.1, 0.5)
        acc = idx[ok]
        x[:, acc] = (two + diff / 15.0)[:, ok]
        t[acc] = np.where(hi[ok] == remaining[ok], end[acc], ti[ok] + hi[ok])
        h[idx] = np.minimum(hi * np.where(ok, grow, np.where(finite, shrink, 0.5)), max_step)
        rej = idx[~ok]
        small = h[rej] < min_step
        if np.any(small):
            c = int(rej[np.argmax(small)])
            return x, (UNDERFLOW if finite[~ok][np.argmax(small)] else NONFINITE), c
        idx = idx[t[idx] < end[idx]]
    if idx.size == 0:
        return x, OK, 0
    flat = [np.ascontiguousarray(np.ravel(v)) for v in params]
    sub, status, col = _finish(np.ascontiguousarray(x[:, idx]), np.ascontiguousarray(y0[:, idx]),
                               np.ascontiguousarray(end[idx]), np.ascontiguousarray(t[idx]),
                               np.ascontiguousarray(h[idx]), steps, *flat, rel_tol, abs_tol, max_steps, min_step,
                               float(max_step))
    x[:, idx] = sub
    return x, status, int(idx[col]) if status else 0
