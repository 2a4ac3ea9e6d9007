"""Model catalog: Stratonovich vector fields, Ito drifts and closed-form flows.

Field index 0 is the Stratonovich drift ``V0``; indices ``1..d`` are the
diffusion fields. States have shape ``(N,)`` or ``(N, M)``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from . import flows
from .errors import DomainError, ParameterError
from .ode import IN_SCHEME_CONFIG, IntegratorConfig
from .params import GenSabrParams, HestonParams, MultiSabrParams


class ModelSpec:
    """Base class of the catalog models. Instances are immutable."""

    name: str
    n_state: int
    n_noise: int
    #: coordinates that must stay non-negative (floored by the Euler scheme)
    nonneg: tuple[int, ...] = ()
    #: fields whose flow is available in closed form (0 means the classical drift)
    closed_flows: frozenset[int] = frozenset()

    # -- fields ---------------------------------------------------------------
    def drift(self, x):
        raise NotImplementedError

    def ito_drift(self, x):
        raise NotImplementedError

    def diffusion(self, j: int, x):
        raise NotImplementedError

    def jacobian(self, j: int, x):
        """Analytic Jacobian ``dV_j^i/dx_k`` with shape ``(N, N, ...)``."""
        raise NotImplementedError

    def field(self, j: int, x):
        if j == 0:
            return self.drift(x)
        if 1 <= j <= self.n_noise:
            return self.diffusion(j, x)
        raise IndexError(f"{self.name} has fields 0..{self.n_noise}, got {j}")

    def diffusion_combination(self, x, w):
        """``sum_j V_j(x) w_j`` for weights ``w`` of shape ``(d, ...)``."""
        out = 0.0
        for j in range(1, self.n_noise + 1):
            out = out + self.diffusion(j, x) * w[j - 1]
        return out

    # -- drift shift ----------------------------------------------------------
    @cached_property
    def shift(self):
        """Structural drift shift making the modified drift flow closed-form."""
        from .drift import DriftShift

        return DriftShift.zero(self.n_noise)

    def modified_drift(self, x):
        return self.drift(x)

    # -- flows ----------------------------------------------------------------
    def flow(self, j: int, s, x, diag=None, cfg: IntegratorConfig = IN_SCHEME_CONFIG):
        raise NotImplementedError

    def modified_drift_flow(self, s, x, diag=None):
        if 0 not in self.closed_flows:
            raise NotImplementedError(f"{self.name}: no closed-form drift flow")
        return self.flow(0, s, x, diag)

    # -- states ---------------------------------------------------------------
    def check_domain(self, x) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n_state:
            raise DomainError(f"{self.name} state must have {self.n_state} coordinates, got {x.shape[0]}")
        for k in self.nonneg:
            if np.any(x[k] < 0):
                raise DomainError(f"{self.name}: coordinate {k} must be >= 0")
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self.name}: state must be finite")

    def truncate(self, x):
        """Copy of ``x`` with the non-negative coordinates floored at zero."""
        out = np.array(x, dtype=float, copy=True)
        for k in self.nonneg:
            out[k] = np.maximum(out[k], 0.0)
        return out

    def chart_state(self, natural):
        """Map a state given in natural coordinates (prices, variances) to the model chart."""
        return np.asarray(natural, dtype=float)

    def asset_prices(self, x):
        return np.asarray(x)[:1]

    @property
    def n_assets(self) -> int:
        return 1


def evaluate_field(model: ModelSpec, j: int, x):
    """Value of field ``j`` at ``x`` after checking that ``x`` lies in the model's domain."""
    if not 0 <= j <= model.n_noise:
        raise IndexError(f"{model.name} has fields 0..{model.n_noise}, got {j}")
    model.check_domain(x)
    return model.field(j, np.asarray(x, dtype=float))


def ito_drift_from_stratonovich(v0, fields, jacobians=None, fd_step: float = 1e-6):
    """Return ``x -> V0(x) + 1/2 sum_j (DV_j(x)) V_j(x)``.

    ``fields`` are callables ``x -> V_j(x)``; ``jacobians`` the matching
    callables returning ``(N, N, ...)`` arrays. Without jacobians, central
    differences with step ``fd_step`` are used.
    """

    def fd_jacobian(f):
        def jac(x):
            x = np.asarray(x, dtype=float)
            cols = []
            for k in range(x.shape[0]):
                e = np.zeros(x.shape[0])
                e[k] = fd_step
                e = e.reshape((-1,) + (1,) * (x.ndim - 1))
                cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * fd_step))
            return np.stack(cols, axis=1)

        return jac

    jacs = list(jacobians) if jacobians is not None else [fd_jacobian(f) for f in fields]

    def ito(x):
        x = np.asarray(x, dtype=float)
        out = np.array(v0(x), dtype=float)
        for f, jac in zip(fields, jacs):
            out = out + 0.5 * np.einsum("ik...,k...->i...", jac(x), f(x))
        return out

    return ito


def _zeros_like(x):
    return np.zeros_like(np.asarray(x, dtype=float))


# --------------------------------------------------------------------- Heston


class HestonModel(ModelSpec):
    n_state = 2
    n_noise = 2
    nonneg = (1,)
    closed_flows = frozenset({0, 1, 2})

    def __init__(self, params: HestonParams, log: bool = True):
        self.params = params
        self.log = log
        self.name = "heston" if log else "heston-plain"

    def drift(self, x):
        p = self.params
        x1, x2 = x[0], x[1]
        c = p.mu - 0.25 * p.xi * p.rho
        first = c - 0.5 * x2 if self.log else c * x1 - 0.5 * x2 * x1
        return np.stack([first + 0.0 * x1, p.kappa * (p.theta - x2) - 0.25 * p.xi**2])

    def ito_drift(self, x):
        p = self.params
        x1, x2 = x[0], x[1]
        first = p.mu - 0.5 * x2 + 0.0 * x1 if self.log else p.mu * x1
        return np.stack([first, p.kappa * (p.theta - x2)])

    def diffusion(self, j, x):
        p = self.params
        x1, x2 = x[0], x[1]
        r = np.sqrt(x2)
        if j == 1:
            return np.stack([r if self.log else r * x1, p.xi * p.rho * r])
        if j == 2:
            return np.stack([0.0 * r, p.xi * np.sqrt(1.0 - p.rho**2) * r])
        raise IndexError(f"Heston has diffusion fields 1..2, got {j}")

    def jacobian(self, j, x):
        p = self.params
        x1, x2 = np.asarray(x[0], float), np.asarray(x[1], float)
        z = 0.0 * x1
        r = np.sqrt(x2)
        if j == 0:
            if self.log:
                rows = [[z, z - 0.5], [z, z - p.kappa]]
            else:
                rows = [[p.mu - 0.25 * p.xi * p.rho - 0.5 * x2, -0.5 * x1], [z, z - p.kappa]]
        elif j == 1:
            first = [z, 0.5 / r] if self.log else [r + z, 0.5 * x1 / r]
            rows = [first, [z, 0.5 * p.xi * p.rho / r]]
        elif j == 2:
            rows = [[z, z], [z, 0.5 * p.xi * np.sqrt(1.0 - p.rho**2) / r]]
        else:
            raise IndexError(j)
        return np.array([[np.broadcast_to(v, x1.shape) for v in row] for row in rows])

    def flow(self, j, s, x, diag=None, cfg=IN_SCHEME_CONFIG):
        return flows.heston_flow(self.params, j, s, x, log=self.log, diag=diag)

    def chart_state(self, natural):
        natural = np.asarray(natural, dtype=float)
        if not self.log:
            return natural
        return np.stack([np.log(natural[0]), natural[1]])

    def asset_prices(self, x):
        x = np.asarray(x)
        return np.exp(x[:1]) if self.log else x[:1]


# -------------------------------------------------------------- SABR / GenSabr


class GenSabrModel(ModelSpec):
    """Two-factor model; ``name="sabr"`` for the classical SABR special case."""

    n_state = 2
    n_noise = 2
    closed_flows = frozenset({1, 2})

    def __init__(self, params: GenSabrParams, name: str = "gensabr"):
        self.params = params
        self.name = name
        self.nonneg = (0, 1) if params.beta < 1.0 else (1,)

    def drift(self, x):
        p = self.params
        x1, x2 = x[0], x[1]
        ya = x2**p.alpha
        first = -0.5 * p.a**2 * p.beta * ya * ya * x1 ** (2 * p.beta - 1) - 0.5 * p.alpha * p.a * p.b * p.rho * ya * x1**p.beta
        return np.stack([first, p.kappa_theta - (p.kappa + 0.5 * p.b**2) * x2])

    def ito_drift(self, x):
        p = self.params
        return np.stack([_zeros_like(x[0]), p.kappa * (p.theta - np.asarray(x[1], dtype=float))])

    def diffusion(self, j, x):
        p = self.params
        x1, x2 = x[0], x[1]
        if j == 1:
            return np.stack([p.a * x2**p.alpha * x1**p.beta, p.b * p.rho * x2])
        if j == 2:
            return np.stack([_zeros_like(x1), p.b * np.sqrt(1.0 - p.rho**2) * x2])
        raise IndexError(f"{self.name} has diffusion fields 1..2, got {j}")

    def diffusion_combination(self, x, w):
        p = self.params
        x1, x2 = x[0], x[1]
        return np.stack([
            p.a * x2**p.alpha * x1**p.beta * w[0],
            p.b * x2 * (p.rho * w[0] + np.sqrt(1.0 - p.rho**2) * w[1]),
        ])

    def jacobian(self, j, x):
        p = self.params
        x1, x2 = np.asarray(x[0], float), np.asarray(x[1], float)
        z = 0.0 * x1
        a, b, al, be, rho = p.a, p.b, p.alpha, p.beta, p.rho
        if j == 0:
            d11 = (-0.5 * a * a * be * (2 * be - 1) * x2 ** (2 * al) * x1 ** (2 * be - 2)
                   - 0.5 * al * a * b * rho * be * x2**al * x1 ** (be - 1))
            d12 = (-a * a * be * al * x2 ** (2 * al - 1) * x1 ** (2 * be - 1)
                   - 0.5 * al * al * a * b * rho * x2 ** (al - 1) * x1**be)
            rows = [[d11, d12], [z, z - (p.kappa + 0.5 * b * b)]]
        elif j == 1:
            rows = [[a * be * x2**al * x1 ** (be - 1), a * al * x2 ** (al - 1) * x1**be], [z, z + b * rho]]
        elif j == 2:
            rows = [[z, z], [z, z + b * np.sqrt(1.0 - rho**2)]]
        else:
            raise IndexError(j)
        return np.array([[np.broadcast_to(v, x1.shape) for v in row] for row in rows])

    @cached_property
    def shift(self):
        from .drift import gensabr_gamma

        return gensabr_gamma(self.params)

    def modified_drift(self, x):
        p = self.params
        x1, x2 = x[0], x[1]
        first = -0.5 * p.a**2 * p.beta * x2 ** (2 * p.alpha) * x1 ** (2 * p.beta - 1)
        return np.stack([first, p.kappa_theta + 0.0 * x2])

    def flow(self, j, s, x, diag=None, cfg=IN_SCHEME_CONFIG):
        return flows.gensabr_flow(self.params, j, s, x, modified=False, cfg=cfg, diag=diag)

    def modified_drift_flow(self, s, x, diag=None):
        return flows.gensabr_flow(self.params, 0, s, x, modified=True, diag=diag)


# ------------------------------------------------------------------ MultiSabr


class MultiSabrModel(ModelSpec):
    """N-asset model with state rows ``(x_1, y_1, ..., x_N, y_N)``.

    Diffusion fields ``1..N`` are ``V_j`` (driven by ``B^j``), ``N+1..2N``
    are ``U_j`` (driven by ``W^j``).
    """

    closed_flows = frozenset()

    def __init__(self, params: MultiSabrParams):
        from .drift import cholesky

        self.params = params
        self.name = "multisabr"
        n = params.n_assets
        self.n_state = 2 * n
        self.n_noise = 2 * n
        self.L = cholesky(params.rho).L
        self.closed_flows = frozenset(range(1, 2 * n + 1))
        self.nonneg = tuple(2 * i + 1 for i in range(n)) + tuple(2 * i for i in range(n) if params.beta[i] < 1.0)
        self._q = flows.multisabr_q(self.L)

    @property
    def n_assets(self) -> int:
        return self.params.n_assets

    def _col(self, v, x):
        return np.asarray(v).reshape((-1,) + (1,) * (np.ndim(x) - 1))

    def _pieces(self, x):
        p = self.params
        xs, ys = np.asarray(x[0::2], float), np.asarray(x[1::2], float)
        c = lambda v: self._col(v, xs)  # noqa: E731
        return p, xs, ys, c

    def drift(self, x):
        p, xs, ys, c = self._pieces(x)
        ya = ys ** c(p.alpha)
        out = np.empty((self.n_state,) + xs.shape[1:])
        out[0::2] = (-0.5 * c(p.a**2 * p.beta) * ya * ya * xs ** c(2 * p.beta - 1)
                     - 0.5 * c(self._q * p.alpha * p.a * p.b) * ya * xs ** c(p.beta))
        out[1::2] = c(p.kappa * p.theta) - c(p.kappa + 0.5 * p.b**2) * ys
        return out

    def ito_drift(self, x):
        p, xs, ys, c = self._pieces(x)
        out = np.zeros((self.n_state,) + xs.shape[1:])
        out[1::2] = c(p.kappa) * (c(p.theta) - ys)
        return out

    def diffusion(self, j, x):
        p, xs, ys, c = self._pieces(x)
        n = self.n_assets
        if not 1 <= j <= 2 * n:
            raise IndexError(f"multisabr has diffusion fields 1..{2 * n}, got {j}")
        out = np.zeros((self.n_state,) + xs.shape[1:])
        col = j - 1
        if j <= n:
            out[0::2] = c(p.a * self.L[:n, col]) * ys ** c(p.alpha) * xs ** c(p.beta)
        out[1::2] = c(p.b * self.L[n:, col]) * ys
        return out

    def diffusion_combination(self, x, w):
        p, xs, ys, c = self._pieces(x)
        n = self.n_assets
        w = np.asarray(w)
        out = np.empty((self.n_state,) + xs.shape[1:])
        # the first N rows of L vanish on the W-block columns
        out[0::2] = c(p.a) * ys ** c(p.alpha) * xs ** c(p.beta) * np.tensordot(self.L[:n, :n], w[:n], axes=1)
        out[1::2] = c(p.b) * ys * np.tensordot(self.L[n:, :], w, axes=1)
        return out

    def jacobian(self, j, x):
        p, xs, ys, c = self._pieces(x)
        n = self.n_assets
        jac = np.zeros((self.n_state, self.n_state) + xs.shape[1:])
        al, be = c(p.alpha), c(p.beta)
        if j == 0:
            a2b = c(p.a**2 * p.beta)
            qa = c(self._q * p.alpha * p.a * p.b)
            dxx = -0.5 * a2b * (2 * be - 1) * ys ** (2 * al) * xs ** (2 * be - 2) - 0.5 * qa * be * ys**al * xs ** (be - 1)
            dxy = -a2b * al * ys ** (2 * al - 1) * xs ** (2 * be - 1) - 0.5 * qa * al * ys ** (al - 1) * xs**be
            dyy = -c(p.kappa + 0.5 * p.b**2) + 0.0 * ys
        elif 1 <= j <= 2 * n:
            col = j - 1
            cx = c(p.a * self.L[:n, col]) if j <= n else c(np.zeros(n))
            dxx = cx * be * ys**al * xs ** (be - 1)
            dxy = cx * al * ys ** (al - 1) * xs**be
            dyy = c(p.b * self.L[n:, col]) + 0.0 * ys
        else:
            raise IndexError(j)
        for i in range(n):
            jac[2 * i, 2 * i] = dxx[i]
            jac[2 * i, 2 * i + 1] = dxy[i]
            jac[2 * i + 1, 2 * i + 1] = dyy[i]
        return jac

    @cached_property
    def shift(self):
        from .drift import multisabr_gamma_delta

        return multisabr_gamma_delta(self.params, self.L)

    def modified_drift(self, x):
        p, xs, ys, c = self._pieces(x)
        out = np.empty((self.n_state,) + xs.shape[1:])
        out[0::2] = -0.5 * c(p.a**2 * p.beta) * ys ** (2 * c(p.alpha)) * xs ** c(2 * p.beta - 1)
        out[1::2] = c(p.kappa * p.theta) + 0.0 * ys
        return out

    def flow(self, j, s, x, diag=None, cfg=IN_SCHEME_CONFIG):
        return flows.multisabr_flow(self.params, self.L, j, s, x, modified=False, cfg=cfg, diag=diag)

    def modified_drift_flow(self, s, x, diag=None):
        return flows.multisabr_flow(self.params, self.L, 0, s, x, modified=True, diag=diag)

    def asset_prices(self, x):
        return np.asarray(x)[0::2]


# ------------------------------------------------------------------- factory

MODEL_NAMES = ("heston", "heston-plain", "sabr", "gensabr", "multisabr")


def build_model(name: str, params) -> ModelSpec:
    """Build a catalog model from a parameter object or a plain mapping."""
    key = name.lower()
    if key not in MODEL_NAMES:
        raise ParameterError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")
    if isinstance(params, dict):
        params = _params_from_mapping(key, params)
    if key in ("heston", "heston-plain"):
        if not isinstance(params, HestonParams):
            raise ParameterError("Heston needs HestonParams")
        return HestonModel(params, log=(key == "heston"))
    if key in ("sabr", "gensabr"):
        if not isinstance(params, GenSabrParams):
            raise ParameterError(f"{key} needs GenSabrParams")
        if key == "sabr" and not (params.alpha == 1.0 and params.kappa == 0.0):
            raise ParameterError("sabr requires alpha = 1 and kappa = 0")
        return GenSabrModel(params, name=key)
    if not isinstance(params, MultiSabrParams):
        raise ParameterError("multisabr needs MultiSabrParams")
    return MultiSabrModel(params)


def _params_from_mapping(key: str, m: dict):
    m = dict(m)
    try:
        if key in ("heston", "heston-plain"):
            return HestonParams(**m)
        if key == "sabr":
            return GenSabrParams.sabr(**m)
        if key == "gensabr":
            return GenSabrParams(**m)
        rho = np.asarray(m.pop("rho"), dtype=float)
        n = len(m["a"])
        if rho.ndim == 1:
            # row-major flat list
            rho = rho.reshape(2 * n, 2 * n)
        return MultiSabrParams(rho=rho, **m)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {key}: {exc}") from None
    except KeyError as exc:
        raise ParameterError(f"missing parameter for {key}: {exc}") from None
    except ParameterError:
        raise
    except ValueError as exc:
        raise ParameterError(f"bad parameters for {key}: {exc}") from None
