"""Brownian drift shifts that turn the drift flow into a closed-form one.

Rewriting ``dX = V0 dt + sum_j V_j o dB^j`` as
``dX = V0^(g) dt + sum_j V_j o d(B^j + g_j t)`` with ``V0^(g) = V0 - sum_j g_j V_j``
leaves the law of ``X`` unchanged for any ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ParameterError
from .params import GenSabrParams, MultiSabrParams

PIVOT_RTOL = 1e-12


class NotPositiveDefiniteError(ParameterError):
    pass


@dataclass(frozen=True)
class DriftShift:
    gamma: np.ndarray
    residual: float = 0.0

    @classmethod
    def zero(cls, d: int) -> "DriftShift":
        return cls(np.zeros(d), 0.0)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.gamma)

    def __eq__(self, other):
        return isinstance(other, DriftShift) and np.array_equal(self.gamma, other.gamma)

    def __hash__(self):
        return hash(self.gamma.tobytes())


@dataclass(frozen=True)
class CholeskyFactor:
    L: np.ndarray
    rho: np.ndarray = field(repr=False)

    @property
    def residual(self) -> float:
        """Max absolute entry of ``L L^T - rho``."""
        return float(np.max(np.abs(self.L @ self.L.T - self.rho)))


def cholesky(rho) -> CholeskyFactor:
    """Lower-triangular ``L`` with ``L L^T = rho``.

    A pivot not exceeding ``1e-12 * max(diag(rho))`` rejects the matrix as not
    (numerically) positive definite; the error names that pivot.
    """
    a = np.array(rho, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ParameterError(f"correlation matrix must be square, got shape {a.shape}")
    floor = PIVOT_RTOL * np.max(np.diag(a))
    L = np.zeros_like(a)
    for k in range(n):
        pivot = a[k, k] - np.dot(L[k, :k], L[k, :k])
        if not pivot > floor:
            raise NotPositiveDefiniteError(
                f"correlation matrix is not positive definite: pivot {k} equals {pivot:.3g}"
            )
        L[k, k] = np.sqrt(pivot)
        L[k + 1:, k] = (a[k + 1:, k] - L[k + 1:, :k] @ L[k, :k]) / L[k, k]
    L.flags.writeable = False
    return CholeskyFactor(L, a)


def gensabr_gamma(p: GenSabrParams) -> DriftShift:
    """Shift for the two-factor model; leaves ``V0^(g) = (-a^2 beta/2 x2^(2 alpha) x1^(2 beta - 1), kappa theta)``."""
    g1 = -0.5 * p.alpha * p.b * p.rho
    g2 = (p.alpha * p.b * p.rho**2 - 2.0 * p.kappa / p.b - p.b) / (2.0 * np.sqrt(1.0 - p.rho**2))
    return DriftShift(np.array([g1, g2]), 0.0)


def multisabr_gamma_delta(p: MultiSabrParams, L) -> DriftShift:
    """Solve the 2N linear conditions for ``(gamma_1..gamma_N, delta_1..delta_N)``.

    Rows ``i`` demand ``sum_j L[i, j] gamma_j + L[i, N+j] delta_j = -q_i alpha_i b_i / 2``,
    rows ``N+i`` demand ``... = -(kappa_i + b_i^2/2) / b_i``.
    """
    if isinstance(L, CholeskyFactor):
        L = L.L
    L = np.asarray(L, dtype=float)
    n = p.n_assets
    q = np.einsum("ij,ij->i", L[n:, :n], L[:n, :n])
    rhs = np.concatenate([-0.5 * q * p.alpha * p.b, -(p.kappa + 0.5 * p.b**2) / p.b])
    if np.any(np.abs(np.diag(L)) == 0.0):
        raise ParameterError("drift system is singular")
    sol = scipy.linalg.solve_triangular(L, rhs, lower=True)
    residual = float(np.max(np.abs(L @ sol - rhs)))
    return DriftShift(sol, residual)


def verify_shift_identity(model, shift: DriftShift, states) -> float:
    """Max over ``states`` of ``|V0 - V0^(g) - sum_j g_j V_j|`` (componentwise)."""
    states = np.asarray(states, dtype=float)
    if shift.gamma.size != model.n_noise:
        raise ValueError(f"shift has {shift.gamma.size} components, model has {model.n_noise} noises")
    modified = model.drift(states) if shift.is_zero else model.modified_drift(states)
    res = model.drift(states) - modified - model.diffusion_combination(states, shift.gamma.reshape((-1,) + (1,) * (states.ndim - 1)))
    return float(np.max(np.abs(res)))
