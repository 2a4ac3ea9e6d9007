"""Validated parameter sets for the model catalog."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

_SNAP = 1e-12


def _snap_beta(beta: float) -> float:
    # the 1/2 < beta < 1 formulas degenerate at the endpoints, so branch
    # selection downstream relies on exact equality
    if abs(beta - 0.5) <= _SNAP:
        return 0.5
    if abs(beta - 1.0) <= _SNAP:
        return 1.0
    return float(beta)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


@dataclass(frozen=True)
class HestonParams:
    mu: float
    kappa: float
    theta: float
    xi: float
    rho: float

    def __post_init__(self):
        _require(self.kappa > 0, f"Heston requires kappa > 0, got {self.kappa}")
        _require(self.theta >= 0, f"Heston requires theta >= 0, got {self.theta}")
        _require(self.xi > 0, f"Heston requires xi > 0, got {self.xi}")
        _require(-1 < self.rho < 1, f"Heston requires -1 < rho < 1, got {self.rho}")
        _require(self.J >= 0, f"Heston requires J = (kappa*theta - xi^2/4)/kappa >= 0, got J = {self.J}")

    @property
    def J(self) -> float:
        return (self.kappa * self.theta - 0.25 * self.xi**2) / self.kappa


@dataclass(frozen=True)
class GenSabrParams:
    """Two-factor SABR-type model with a mean-reverting log-normal factor.

    Plain SABR is the special case ``alpha=1, kappa=0`` (see :meth:`sabr`).
    """

    a: float
    b: float
    alpha: float
    beta: float
    kappa: float = 0.0
    theta: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta", _snap_beta(self.beta))
        _require(0.5 <= self.beta <= 1.0, f"beta must lie in [1/2, 1], got {self.beta}")
        _require(self.a > 0, f"a must be > 0, got {self.a}")
        _require(self.b > 0, f"b must be > 0, got {self.b}")
        _require(self.alpha > 0, f"alpha must be > 0, got {self.alpha}")
        _require(self.kappa >= 0, f"kappa must be >= 0, got {self.kappa}")
        _require(self.theta >= 0, f"theta must be >= 0, got {self.theta}")
        _require(-1 < self.rho < 1, f"rho must satisfy -1 < rho < 1 (strict), got {self.rho}")

    @classmethod
    def sabr(cls, beta: float, a: float, b: float, rho: float) -> "GenSabrParams":
        return cls(a=a, b=b, alpha=1.0, beta=beta, kappa=0.0, theta=0.0, rho=rho)

    @property
    def kappa_theta(self) -> float:
        return self.kappa * self.theta


def _as_vector(name: str, values, n: int | None) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if n is not None:
        _require(arr.size == n, f"{name} must have length {n}, got {arr.size}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MultiSabrParams:
    """N assets, each driven by a GenSabr-type pair (x_i, y_i).

    ``rho`` is the 2N x 2N correlation of (B~_1..B~_N, W~_1..W~_N).
    """

    a: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    theta: np.ndarray
    rho: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = np.size(self.a)
        _require(n >= 1, "at least one asset is required")
        for name in ("a", "b", "alpha", "beta", "kappa", "theta"):
            object.__setattr__(self, name, _as_vector(name, getattr(self, name), n))
        beta = np.array([_snap_beta(v) for v in self.beta])
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)

        for i in range(n):
            _require(0.5 <= self.beta[i] <= 1.0, f"beta[{i}] must lie in [1/2, 1], got {self.beta[i]}")
            _require(self.a[i] > 0, f"a[{i}] must be > 0, got {self.a[i]}")
            _require(self.b[i] > 0, f"b[{i}] must be > 0, got {self.b[i]}")
            _require(self.alpha[i] > 0, f"alpha[{i}] must be > 0, got {self.alpha[i]}")
            _require(self.kappa[i] >= 0, f"kappa[{i}] must be >= 0, got {self.kappa[i]}")
            _require(self.theta[i] >= 0, f"theta[{i}] must be >= 0, got {self.theta[i]}")

        rho = np.array(self.rho, dtype=float)
        _require(rho.shape == (2 * n, 2 * n), f"rho must be {2 * n}x{2 * n}, got shape {rho.shape}")
        _require(np.all(np.isfinite(rho)), "rho must be finite")
        _require(np.allclose(rho, rho.T, rtol=0.0, atol=1e-12), "rho must be symmetric")
        _require(np.all(np.abs(np.diag(rho) - 1.0) <= 1e-12), "rho must have unit diagonal")
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)

        # positive-definiteness is checked by the factorization itself
        from .drift import cholesky

        cholesky(rho)

    @property
    def n_assets(self) -> int:
        return int(self.a.size)

    def asset(self, i: int) -> GenSabrParams:
        """Per-asset coefficients as a two-factor parameter set (rho set to 0)."""
        return GenSabrParams(
            a=self.a[i], b=self.b[i], alpha=self.alpha[i], beta=self.beta[i],
            kappa=self.kappa[i], theta=self.theta[i], rho=0.0,
        )
