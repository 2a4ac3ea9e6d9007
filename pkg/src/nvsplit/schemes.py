"""Discretization schemes: Euler-Maruyama, Ninomiya-Victoir (NV), NV with drift
and the Girsanov-weighted NV scheme.

All step functions act on a batch of trajectories at once: states have shape
``(N, M)``, increments ``(d, M)`` and coins ``(M,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drift import DriftShift
from .errors import DomainError
from .flows import Diagnostics
from .ode import IN_SCHEME_CONFIG, IntegratorConfig
from .qmc import TrajectoryDraw


@dataclass
class SchemeOutput:
    terminal: np.ndarray
    weight: np.ndarray | float = 1.0
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


def euler_step(model, x, dt: float, Z):
    """``x + V~0(x) dt + sqrt(dt) sum_j V_j(x) Z_j`` with fields evaluated at the
    truncated state (non-negative coordinates floored at zero)."""
    xt = model.truncate(x) if model.nonneg else x
    return x + model.ito_drift(xt) * dt + np.sqrt(dt) * model.diffusion_combination(xt, np.asarray(Z))


def _diffusion_sweep(model, x, amounts, Lambda, diag):
    """Apply the diffusion flows: ``V_d`` first and ``V_1`` last where ``Lambda = -1``,
    the reverse order where ``Lambda = +1``."""
    d = model.n_noise
    lam = np.broadcast_to(np.asarray(Lambda), x.shape[1:])
    out = np.empty_like(x)
    for sign, order in ((-1, range(d, 0, -1)), (1, range(1, d + 1))):
        sel = lam == sign
        if not np.any(sel):
            continue
        if np.all(sel):
            y, amt = x, amounts
        else:
            y, amt = x[:, sel], amounts[:, sel]
        for j in order:
            y = model.flow(j, amt[j - 1], y, diag)
        if np.all(sel):
            return y
        out[:, sel] = y
    return out


def _drift_flow(model, shift: DriftShift | None, s, x, diag, cfg):
    if shift is None or shift.is_zero:
        return model.flow(0, s, x, diag, cfg)
    if shift != model.shift:
        raise ValueError(f"{model.name}: no closed-form drift flow for shift {shift.gamma}")
    return model.modified_drift_flow(s, x, diag)


def nv_step(model, x, dt: float, Z, Lambda, diag: Diagnostics | None = None,
            cfg: IntegratorConfig = IN_SCHEME_CONFIG, drift_head: bool = True, drift_tail: bool = True):
    """One classical NV step: half drift, diffusion flows for ``Z_j sqrt(dt)``, half drift."""
    return _split_step(model, None, x, dt, np.sqrt(dt) * np.asarray(Z, dtype=float), Lambda, diag, cfg,
                       drift_head, drift_tail)


def nvd_step(model, shift: DriftShift, x, dt: float, Zstd, Lambda, diag: Diagnostics | None = None,
             drift_head: bool = True, drift_tail: bool = True):
    """One NV-with-drift step: modified half drifts, diffusion amounts ``sqrt(dt) Z + dt gamma``."""
    Zstd = np.asarray(Zstd, dtype=float)
    g = shift.gamma.reshape((-1,) + (1,) * (Zstd.ndim - 1))
    amounts = np.sqrt(dt) * Zstd + dt * g
    return _split_step(model, shift, x, dt, amounts, Lambda, diag, IN_SCHEME_CONFIG, drift_head, drift_tail)


def girsanov_step(model, shift: DriftShift, x, dt: float, Zstd, Lambda, running_B,
                  diag: Diagnostics | None = None):
    """NV step of the auxiliary process (modified drift, unshifted increments).

    Returns the new state and the updated running Brownian values used by
    :func:`girsanov_weight`.
    """
    incr = np.sqrt(dt) * np.asarray(Zstd, dtype=float)
    out = _split_step(model, shift, x, dt, incr, Lambda, diag, IN_SCHEME_CONFIG, True, True)
    return out, running_B + incr


def girsanov_weight(shift: DriftShift, B, T: float):
    """Density ``exp(sum_j gamma_j B^j_T - |gamma|^2 T / 2)``."""
    g = shift.gamma.reshape((-1,) + (1,) * (np.ndim(B) - 1))
    return np.exp(np.sum(g * B, axis=0) - 0.5 * float(shift.gamma @ shift.gamma) * T)


def _split_step(model, shift, x, dt, amounts, Lambda, diag, cfg, head, tail):
    if head:
        x = _drift_flow(model, shift, 0.5 * dt, x, diag, cfg)
    x = _diffusion_sweep(model, x, amounts, Lambda, diag)
    if tail:
        x = _drift_flow(model, shift, 0.5 * dt, x, diag, cfg)
    return x


def simulate_trajectory(scheme: str, model, K: int, T: float, x0, draw: TrajectoryDraw,
                        shift: DriftShift | None = None, fusion: bool = False,
                        cfg: IntegratorConfig = IN_SCHEME_CONFIG) -> SchemeOutput:
    """Run ``K`` steps of ``scheme`` over ``[0, T]`` from the chart state ``x0``.

    ``draw.Z`` has shape ``(K, d, M)``. With ``fusion`` the adjacent drift half
    steps of consecutive NV-type steps are merged into one full step.
    """
    if draw.K != K:
        raise ValueError(f"draw has {draw.K} steps, expected {K}")
    if draw.Z.shape[1] != model.n_noise:
        raise ValueError(f"draw has {draw.Z.shape[1]} noises, model has {model.n_noise}")
    m = draw.Z.shape[2:]
    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape((-1,) + (1,) * len(m)), (model.n_state,) + m).copy()
    dt = T / K
    diag = Diagnostics()

    if scheme == "euler":
        for k in range(K):
            x = euler_step(model, x, dt, draw.Z[k])
        return SchemeOutput(x, 1.0, diag)

    if draw.Lambda is None:
        raise ValueError(f"scheme {scheme!r} needs order coins")
    if scheme == "nv":
        shift = None
    elif shift is None:
        shift = model.shift

    B = np.zeros(draw.Z.shape[1:]) if scheme == "nvg" else None
    for k in range(K):
        head = not fusion or k == 0
        tail = not fusion or k == K - 1
        try:
            if scheme == "nv":
                x = nv_step(model, x, dt, draw.Z[k], draw.Lambda[k], diag, cfg, head, tail)
            elif scheme == "nvd":
                x = nvd_step(model, shift, x, dt, draw.Z[k], draw.Lambda[k], diag, head, tail)
            elif scheme == "nvg":
                incr = np.sqrt(dt) * draw.Z[k]
                x = _split_step(model, shift, x, dt, incr, draw.Lambda[k], diag, cfg, head, tail)
                B = B + incr
            else:
                raise ValueError(f"unknown scheme {scheme!r}")
        except DomainError as exc:
            raise DomainError(f"step {k}: {exc}") from None
        if fusion and k < K - 1:
            x = _drift_flow(model, None if scheme == "nv" else shift, dt, x, diag, cfg)
    weight = girsanov_weight(shift, B, T) if scheme == "nvg" else 1.0
    return SchemeOutput(x, weight, diag)
