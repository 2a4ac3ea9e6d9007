"""Closed-form time-s flows ``exp(sV)x`` of the catalog vector fields.

States are arrays of shape ``(N,)`` or ``(N, M)`` (one column per trajectory).
Every function returns a fresh array and leaves its input untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, IntegrationError
from .ode import IN_SCHEME_CONFIG, IntegratorConfig, integrate
from .params import GenSabrParams, HestonParams, MultiSabrParams

SERIES_CUTOFF = 1e-8


@dataclass
class Diagnostics:
    """Counters accumulated while composing flows.

    ``oracle_calls`` counts numerical ODE solves per trajectory (every solve
    is done for all trajectories at once); ``clamp_hits`` counts individual
    trajectory/flow pairs where a positive-part clamp was active.
    """

    oracle_calls: int = 0
    clamp_hits: int = 0

    def merge(self, other: "Diagnostics") -> None:
        self.oracle_calls += other.oracle_calls
        self.clamp_hits += other.clamp_hits


def _count_clamps(diag, base):
    if diag is not None:
        diag.clamp_hits += int(np.count_nonzero(base < 0))


def expm1_ratio(c, s):
    """``(exp(c*s) - 1) / c``, continuous through ``c = 0`` (where it equals ``s``)."""
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    z = c * s
    small = np.abs(z) < SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, s * (1.0 + 0.5 * z), np.expm1(z) / np.where(small, 1.0, c))
    return out if out.ndim else float(out)


def _power_flow(beta, x, H, diag=None):
    """Solution of ``y' = h(t) y**beta`` given ``H = int_0^s h``; ``beta < 1``."""
    e = 1.0 - beta
    base = e * H + x**e
    _count_clamps(diag, base)
    return np.maximum(base, 0.0) ** (1.0 / e)


def power_ode_flow(beta: float, x, H):
    """``((1-beta) H + x**(1-beta))_+ ** (1/(1-beta))`` for ``0 < beta < 1``, ``x >= 0``.

    At ``x = 0`` with ``H > 0`` this is the non-zero branch of the solution,
    which keeps the flow right-continuous in ``x``.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"power ODE requires 0 < beta < 1, got {beta}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("power ODE requires x >= 0")
    with np.errstate(over="ignore"):
        out = _power_flow(beta, x, np.asarray(H, dtype=float))
    if np.any(np.isinf(out)):
        raise OverflowError("power ODE solution exceeds the floating-point range")
    return out if out.ndim else float(out)


# --------------------------------------------------------------------- Heston


def heston_flow(p: HestonParams, j: int, s, x, log: bool = True, diag: Diagnostics | None = None):
    """Flow of Heston field ``j`` for time ``s``; ``log`` selects the (log x1, x2) chart."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[0], x[1]
    if j == 0:
        J = p.J
        decay = np.expm1(-p.kappa * s)
        new2 = (x2 - J) * (decay + 1.0) + J
        incr = (p.mu - 0.25 * p.xi * p.rho - 0.5 * J) * s + 0.5 * (x2 - J) / p.kappa * decay
    elif j == 1:
        c = 0.5 * p.xi * p.rho
        r = np.sqrt(x2)
        u = c * s + r
        pos = u > 0
        _count_clamps(diag, u)
        new2 = np.where(pos, u * u, 0.0)
        # ((u)_+^2 - x2)/(xi rho) with the difference of squares cancelled;
        # the clamped branch only occurs when xi*rho*s < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            incr = np.where(pos, 0.5 * s * (u + r), -x2 / np.where(pos, 1.0, p.xi * p.rho))
    elif j == 2:
        u = 0.5 * p.xi * np.sqrt(1.0 - p.rho**2) * s + np.sqrt(x2)
        _count_clamps(diag, u)
        return np.stack([np.array(x1, copy=True), np.maximum(u, 0.0) ** 2])
    else:
        raise IndexError(f"Heston has fields 0..2, got {j}")
    new1 = x1 + incr if log else x1 * np.exp(incr)
    return np.stack([new1, new2])


# -------------------------------------------------------- SABR-type building blocks


def _sv_diffusion(x, y, cx, cy, alpha, beta, s, diag=None):
    """Flow of ``(cx y**alpha x**beta, cy y)`` for time ``s``."""
    new_y = y * np.exp(cy * s)
    if cx == 0.0:
        return np.array(x, copy=True), new_y
    H = cx * y**alpha * expm1_ratio(alpha * cy, s)
    if beta == 1.0:
        new_x = x * np.exp(H)
    else:
        new_x = _power_flow(beta, x, H, diag)
    return new_x, new_y


def level_integral(kt, alpha, s, y):
    """``P(s) = int_0^s (kt*t + y)**(2 alpha) dt`` with the ``kt -> 0`` limit ``s y**(2 alpha)``."""
    y = np.asarray(y, dtype=float)
    m = 2.0 * alpha + 1.0
    if kt == 0.0:
        return s * y ** (2.0 * alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = kt * s / y
        small = np.abs(u) < SERIES_CUTOFF
        ratio = np.where(
            small,
            1.0 + 0.5 * (m - 1.0) * u,
            np.expm1(m * np.log1p(u)) / np.where(small, 1.0, m * u),
        )
        out = s * y ** (2.0 * alpha) * ratio
        out = np.where(y > 0, out, np.power(np.float64(kt) * s, m) / (m * kt))
    return out


def _sv_modified_drift(x, y, a, alpha, beta, kt, s, diag=None):
    """Flow of ``(-a^2 beta/2 y**(2 alpha) x**(2 beta - 1), kt)`` for time ``s``."""
    P = level_integral(kt, alpha, s, y)
    if beta == 1.0:
        new_x = x * np.exp(-0.5 * a * a * P)
    elif beta == 0.5:
        base = x - 0.25 * a * a * P
        _count_clamps(diag, base)
        new_x = np.maximum(base, 0.0)
    else:
        new_x = _power_flow(2.0 * beta - 1.0, x, -0.5 * a * a * beta * P, diag)
    return new_x, kt * s + y


def _factor_mean_path(kappa, theta, b, y, t):
    """Level ``h(t)`` of the classical Stratonovich drift for the volatility factor."""
    k = kappa + 0.5 * b * b
    target = kappa * theta / k
    return (y - target) * np.exp(-k * t) + target


# ------------------------------------------------------------------- GenSabr


def _gensabr_drift_rhs(t, x1, x2, a, b, alpha, beta, kappa, theta, rho):
    y = _factor_mean_path(kappa, theta, b, x2, t)
    return _price_drift(x1, y, a, alpha, beta, alpha * a * b * rho)


def _price_drift(x, y, a, alpha, beta, cross):
    """``-a^2 beta/2 y^(2 alpha) x^(2 beta - 1) - cross/2 y^alpha x^beta``, zero for ``x <= 0``.

    The price can reach zero in finite time under this drift; zero is then absorbing.
    """
    pos = x > 0
    xp = np.where(pos, x, 1.0)
    w = np.exp(alpha * np.log(y) + beta * np.log(xp))
    return np.where(pos, -0.5 * w * (a * a * beta * w / xp + cross), 0.0)


def _floor_price(x, diag):
    neg = x < 0
    if np.any(neg):
        if diag is not None:
            diag.clamp_hits += int(np.count_nonzero(neg))
        x = np.where(neg, 0.0, x)
    return x


def _compiled_price_solve(xp, lv, s, a, b, alpha, beta, kappa, theta, cross, cfg):
    m = xp.shape[1]
    rate = kappa + 0.5 * b * b
    cols = [np.broadcast_to(np.asarray(v, dtype=float), (xp.shape[0],)) for v in (a, alpha, beta, rate,
                                                                                    kappa * theta / rate, cross)]
    sv = np.broadcast_to(np.asarray(s, dtype=float), (m,))
    if np.any(sv < 0):
        raise ValueError("integration time must be non-negative")
    out, status, col = kernels.price_drift_flow(xp, lv, sv, *cols,
                                                cfg.rel_tol, cfg.abs_tol, cfg.max_steps, cfg.min_step, cfg.max_step)
    if status == kernels.NONFINITE:
        raise DomainError(f"price drift left its domain (state {xp[:, col]}, level {lv[:, col]})")
    if status == kernels.BUDGET:
        raise IntegrationError(f"step budget of {cfg.max_steps} exhausted (state {xp[:, col]})")
    if status == kernels.UNDERFLOW:
        raise IntegrationError(f"step size fell below {cfg.min_step:g} (state {xp[:, col]})")
    return out


def gensabr_drift_flow_numeric(p: GenSabrParams, s, x, cfg: IntegratorConfig = IN_SCHEME_CONFIG,
                               diag: Diagnostics | None = None, compiled: bool = True):
    """Flow of the classical drift: closed-form factor, numerically solved first component.

    ``compiled=False`` routes the solve through the generic :func:`integrate`.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[0], x[1]
    scalar = np.ndim(x1) == 0
    x2v = np.atleast_1d(x2)

    def rhs(t, y, lvl):
        return _gensabr_drift_rhs(t, y, lvl, p.a, p.b, p.alpha, p.beta, p.kappa, p.theta, p.rho)

    x1v = np.atleast_1d(x1)[None, :]
    if compiled:
        solved = _compiled_price_solve(x1v, x2v[None, :], s, p.a, p.b, p.alpha, p.beta, p.kappa, p.theta,
                                       p.alpha * p.a * p.b * p.rho, cfg)
    else:
        solved = integrate(rhs, x1v, s, cfg, args=(x2v,))
    new1 = _floor_price(solved[0], diag)
    if diag is not None:
        diag.oracle_calls += 1
    new2 = _factor_mean_path(p.kappa, p.theta, p.b, x2v, s)
    out = np.stack([new1, new2])
    return out[:, 0] if scalar else out


def gensabr_flow(p: GenSabrParams, j: int, s, x, modified: bool = False,
                 cfg: IntegratorConfig = IN_SCHEME_CONFIG, diag: Diagnostics | None = None):
    """Flow of field ``j`` of the two-factor model.

    ``j = 0`` with ``modified=True`` is the shifted drift ``V0^(gamma)``
    (closed form); with ``modified=False`` it is the classical drift, whose
    first component requires the ODE solver.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[0], x[1]
    if j == 0:
        if not modified:
            return gensabr_drift_flow_numeric(p, s, x, cfg, diag)
        n1, n2 = _sv_modified_drift(x1, x2, p.a, p.alpha, p.beta, p.kappa_theta, s, diag)
    elif j == 1:
        n1, n2 = _sv_diffusion(x1, x2, p.a, p.b * p.rho, p.alpha, p.beta, s, diag)
    elif j == 2:
        n1, n2 = np.array(x1, copy=True), x2 * np.exp(p.b * np.sqrt(1.0 - p.rho**2) * s)
    else:
        raise IndexError(f"two-factor model has fields 0..2, got {j}")
    return np.stack([n1, n2])


# ---------------------------------------------------------------- MultiSabr


def multisabr_flow(p: MultiSabrParams, L: np.ndarray, j: int, s, x, modified: bool = False,
                   cfg: IntegratorConfig = IN_SCHEME_CONFIG, diag: Diagnostics | None = None):
    """Flow of field ``j`` of the N-asset model; state rows are (x_1, y_1, ..., x_N, y_N).

    Field indices: 0 is the drift, ``1..N`` the fields ``V_j`` attached to
    ``B^j`` and ``N+1..2N`` the fields ``U_j`` attached to ``W^j``. ``L`` is the
    lower Cholesky factor of ``p.rho``.
    """
    n = p.n_assets
    x = np.asarray(x, dtype=float)
    out = np.array(x, copy=True)
    if j == 0:
        if not modified:
            return multisabr_drift_flow_numeric(p, L, s, x, cfg, diag)
        for i in range(n):
            out[2 * i], out[2 * i + 1] = _sv_modified_drift(
                x[2 * i], x[2 * i + 1], p.a[i], p.alpha[i], p.beta[i], p.kappa[i] * p.theta[i], s, diag)
    elif 1 <= j <= n:
        col = j - 1
        for i in range(n):
            cx = p.a[i] * L[i, col]
            cy = p.b[i] * L[n + i, col]
            if cx == 0.0 and cy == 0.0:
                continue
            out[2 * i], out[2 * i + 1] = _sv_diffusion(
                x[2 * i], x[2 * i + 1], cx, cy, p.alpha[i], p.beta[i], s, diag)
    elif n < j <= 2 * n:
        col = j - 1
        for i in range(n):
            cy = p.b[i] * L[n + i, col]
            if cy != 0.0:
                out[2 * i + 1] = x[2 * i + 1] * np.exp(cy * s)
    else:
        raise IndexError(f"{n}-asset model has fields 0..{2 * n}, got {j}")
    return out


def multisabr_q(L: np.ndarray) -> np.ndarray:
    """``q_i = sum_j L[N+i, j] L[i, j]`` over the B-block columns."""
    n = L.shape[0] // 2
    return np.einsum("ij,ij->i", L[n:, :n], L[:n, :n])


def multisabr_drift_flow_numeric(p: MultiSabrParams, L: np.ndarray, s, x,
                                 cfg: IntegratorConfig = IN_SCHEME_CONFIG, diag: Diagnostics | None = None,
                                 compiled: bool = True):
    """Flow of the classical drift: closed-form factors, prices solved jointly."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    xs = x[:, None] if scalar else x
    q = multisabr_q(L)
    lv = xs[1::2]
    a, b, al, be, ka, th = (v[:, None] for v in (p.a, p.b, p.alpha, p.beta, p.kappa, p.theta))
    cross = q[:, None] * al * a * b

    def rhs(t, xa, lvl):
        return _price_drift(xa, _factor_mean_path(ka, th, b, lvl, t), a, al, be, cross)

    out = np.empty_like(xs)
    if compiled:
        solved = _compiled_price_solve(xs[0::2], lv, s, p.a, p.b, p.alpha, p.beta, p.kappa, p.theta,
                                       q * p.alpha * p.a * p.b, cfg)
    else:
        solved = integrate(rhs, xs[0::2], s, cfg, args=(lv,))
    out[0::2] = _floor_price(solved, diag)
    out[1::2] = _factor_mean_path(ka, th, b, lv, s)
    if diag is not None:
        diag.oracle_calls += 1
    return out[:, 0] if scalar else out
