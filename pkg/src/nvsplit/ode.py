"""Explicit Runge-Kutta integration, vectorized over independent trajectories.

Each trajectory (column of the state array) carries its own time and step
size, so the result for one column never depends on which other columns were
integrated alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationError


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_steps: int = 100_000
    min_step: float = 1e-13
    #: cap on any single step; keeps the step-doubling estimate in its asymptotic range
    max_step: float = float("inf")

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.min_step > 0:
            raise ValueError("min_step must be positive")
        if not self.max_step >= self.min_step:
            raise ValueError("max_step must be >= min_step")


ORACLE_CONFIG = IntegratorConfig(max_step=0.02)
IN_SCHEME_CONFIG = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10)


def _subset(args, idx):
    return tuple(a[..., idx] if isinstance(a, np.ndarray) and a.ndim else a for a in args)


def rk4_step(field, t, y, h, args=()):
    """One classical RK4 step; ``t`` and ``h`` broadcast against the trajectory axis."""
    k1 = field(t, y, *args)
    k2 = field(t + 0.5 * h, y + 0.5 * h * k1, *args)
    k3 = field(t + 0.5 * h, y + 0.5 * h * k2, *args)
    k4 = field(t + h, y + h * k3, *args)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _as_2d(x0):
    x = np.array(x0, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("state must have shape (n,) or (n, m)")
    return x, squeeze


def rk4(field, x0, s, n_steps: int, args=()):
    """Fixed-step RK4 over ``[0, s]``; ``field(t, y, *args)``."""
    y, squeeze = _as_2d(x0)
    h = s / n_steps
    t = 0.0
    for _ in range(n_steps):
        y = rk4_step(field, t, y, h, args)
        t += h
    return y[:, 0] if squeeze else y


def integrate(field, x0, s, cfg: IntegratorConfig = ORACLE_CONFIG, args=()):
    """Solve ``y' = field(t, y, *args)``, ``y(0) = x0`` up to time ``s``.

    ``x0`` has shape ``(n,)`` or ``(n, m)``; columns are independent
    trajectories and array entries of ``args`` are indexed along their last
    axis together with them. ``s`` is a scalar or one duration per column.

    Error control is by step doubling: a full RK4 step is compared with two
    half steps and the local-extrapolated half-step result is kept. A step
    that produces non-finite values (the field left its domain) is retried at
    half size until ``cfg.min_step``.
    """
    y, squeeze = _as_2d(x0)
    m = y.shape[1]
    end = np.broadcast_to(np.asarray(s, dtype=float), (m,)).copy()
    if np.any(end < 0):
        raise ValueError("integration time must be non-negative")
    t = np.zeros(m)
    h = np.minimum(end, cfg.max_step)
    active = end > 0
    steps = 0
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        steps += 1
        if steps > cfg.max_steps:
            raise IntegrationError(
                f"step budget of {cfg.max_steps} exhausted at t={t[idx].min():.6g} (target {end[idx].max():.6g})"
            )
        yi = y[:, idx]
        ti = t[idx]
        remaining = end[idx] - ti
        hi = np.minimum(h[idx], remaining)
        ai = _subset(args, idx)
        with np.errstate(all="ignore"):
            one = rk4_step(field, ti, yi, hi, ai)
            mid = rk4_step(field, ti, yi, 0.5 * hi, ai)
            two = rk4_step(field, ti + 0.5 * hi, mid, 0.5 * hi, ai)
            diff = two - one
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(yi), np.abs(two))
            err = np.max(np.abs(diff) / scale, axis=0) / 15.0
            finite = np.all(np.isfinite(two), axis=0) & np.all(np.isfinite(one), axis=0) & np.isfinite(err)
            ok = finite & (err <= 1.0)
            grow = np.clip(0.9 * err ** -0.2, 0.2, 4.0)
            shrink = np.clip(0.9 * err ** -0.2, 0.1, 0.5)
        factor = np.where(ok, grow, np.where(finite, shrink, 0.5))

        acc = idx[ok]
        y[:, acc] = (two + diff / 15.0)[:, ok]
        t[acc] = np.where(hi[ok] == remaining[ok], end[acc], ti[ok] + hi[ok])
        h[idx] = np.minimum(hi * factor, cfg.max_step)

        rej = ~ok
        if np.any(rej):
            bad = h[idx[rej]] < cfg.min_step
            if np.any(bad):
                j = idx[rej][np.argmax(bad)]
                if not np.all(np.isfinite(two[:, rej][:, np.argmax(bad)])):
                    raise DomainError(f"vector field left its domain at t={t[j]:.6g} (state {y[:, j]})")
                raise IntegrationError(f"step size fell below {cfg.min_step:g} at t={t[j]:.6g}")
        active[idx] = t[idx] < end[idx]
    return y[:, 0] if squeeze else y
