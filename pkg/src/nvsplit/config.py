"""Versioned JSON run configurations and the shipped experiment presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DomainError, ParameterError
from .models import build_model
from .pricing import Payoff, TimingProtocol
from .qmc import SCHEMES

SCHEMA_VERSION = 1
PRESETS = ("sabr", "sabr_fig1", "gensabr", "multisabr", "multisabr_sym", "multisabr_lower")

_KEYS = {"version", "model", "scheme", "schemes", "payoff", "K", "K_grid", "M", "T", "x0",
         "sequence", "seed", "reference", "output", "bench"}
_BENCH_KEYS = {"configs", "M", "M0", "threshold", "consecutive", "M_cap", "M_truth", "repeats"}


class ConfigError(ParameterError):
    pass


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _positive_int(v, name):
    _need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"{name} must be a positive integer, got {v!r}")
    return v


@dataclass
class RunConfig:
    model_name: str
    model_params: dict
    x0: list[float]
    T: float = 1.0
    scheme: str = "nvd"
    schemes: list[str] = field(default_factory=lambda: ["euler", "nv", "nvd"])
    payoff: dict = field(default_factory=lambda: {"kind": "european-call", "strike": 1.05})
    K: int = 8
    K_grid: list[int] = field(default_factory=lambda: [4, 8, 16, 32, 64])
    M: int = 2**16
    sequence: str = "sobol"
    seed: int = 0
    reference: float | None = None
    output: str | None = None
    bench: dict = field(default_factory=dict)

    # ---------------------------------------------------------------- parsing
    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _need(isinstance(d, dict), "config must be a JSON object")
        unknown = set(d) - _KEYS
        _need(not unknown, f"unknown config keys: {', '.join(sorted(unknown))}")
        _need(d.get("version") == SCHEMA_VERSION, f"config version must be {SCHEMA_VERSION}, got {d.get('version')!r}")
        model = d.get("model")
        _need(isinstance(model, dict) and "name" in model and "params" in model,
              "config needs a model block with 'name' and 'params'")
        _need("x0" in d, "config needs x0")
        kw = {k: d[k] for k in ("T", "scheme", "schemes", "payoff", "K", "K_grid", "M", "sequence",
                                "seed", "reference", "output", "bench") if k in d}
        cfg = cls(model["name"], dict(model["params"]), list(d["x0"]), **kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "model": {"name": self.model_name, "params": self.model_params},
            "scheme": self.scheme, "schemes": list(self.schemes), "payoff": dict(self.payoff),
            "K": self.K, "K_grid": list(self.K_grid), "M": self.M, "T": self.T, "x0": list(self.x0),
            "sequence": self.sequence, "seed": self.seed, "reference": self.reference,
            "output": self.output, "bench": dict(self.bench),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    # ------------------------------------------------------------- validation
    def validate(self) -> None:
        model = self.build_model()
        _need(self.scheme in SCHEMES, f"unknown scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        _need(isinstance(self.schemes, list) and self.schemes, "schemes must be a non-empty list")
        for s in self.schemes:
            _need(s in SCHEMES, f"unknown scheme {s!r}; expected one of {', '.join(SCHEMES)}")
        _positive_int(self.K, "K")
        _positive_int(self.M, "M")
        _need(isinstance(self.K_grid, list) and self.K_grid, "K grid must be non-empty")
        for k in self.K_grid:
            _positive_int(k, "K grid entry")
        _need(isinstance(self.T, (int, float)) and self.T > 0, f"T must be positive, got {self.T!r}")
        _need(self.sequence in ("sobol", "mc"), f"sequence must be 'sobol' or 'mc', got {self.sequence!r}")
        _need(isinstance(self.seed, int), "seed must be an integer")
        if self.reference is not None:
            _need(isinstance(self.reference, (int, float)) and self.reference != 0, "reference must be a non-zero number")
        try:
            x0 = np.asarray(self.x0, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("x0 must be a list of numbers") from None
        _need(x0.ndim == 1 and x0.size == model.n_state,
              f"x0 must have {model.n_state} entries for {model.name}, got {x0.size}")
        try:
            model.check_domain(model.chart_state(x0))
        except (DomainError, FloatingPointError) as exc:
            raise ConfigError(f"x0 outside the model domain: {exc}") from None
        payoff = self.build_payoff()
        if payoff.kind == "european-call":
            _need(model.n_assets == 1, f"{model.name} has {model.n_assets} assets; use a basket-call payoff")
        elif payoff.weights is not None:
            _need(len(payoff.weights) == model.n_assets,
                  f"basket needs {model.n_assets} weights, got {len(payoff.weights)}")
        b = self.bench
        _need(isinstance(b, dict), "bench must be an object")
        unknown = set(b) - _BENCH_KEYS
        _need(not unknown, f"unknown bench keys: {', '.join(sorted(unknown))}")
        for pair in b.get("configs", []):
            _need(isinstance(pair, list) and len(pair) == 2 and pair[0] in SCHEMES,
                  f"bench configs entries must be [scheme, K], got {pair!r}")
            _positive_int(pair[1], "bench K")
        for key in ("M", "M0", "M_cap", "M_truth", "repeats", "consecutive"):
            if b.get(key) is not None:
                _positive_int(b[key], f"bench {key}")

    def build_model(self):
        return build_model(self.model_name, self.model_params)

    def build_payoff(self) -> Payoff:
        p = self.payoff
        _need(isinstance(p, dict), "payoff must be an object")
        unknown = set(p) - {"kind", "strike", "weights"}
        _need(not unknown, f"unknown payoff keys: {', '.join(sorted(unknown))}")
        try:
            w = p.get("weights")
            return Payoff(p.get("kind", "european-call"), float(p.get("strike", 1.05)),
                          None if w is None else tuple(float(v) for v in w))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad payoff: {exc}") from None

    def bench_configs(self):
        pairs = self.bench.get("configs") or [[s, self.K] for s in self.schemes]
        return [(s, k) for s, k in pairs if s in self.schemes]

    def timing_protocol(self) -> TimingProtocol:
        kw = {k: self.bench[k] for k in ("M0", "threshold", "consecutive", "M_cap", "M_truth", "repeats")
              if k in self.bench}
        return TimingProtocol(**kw)


def preset_path(name: str):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return resources.files("nvsplit").joinpath(f"presets/{name}.json")


def load_preset(name: str) -> RunConfig:
    return RunConfig.from_dict(json.loads(preset_path(name).read_text()))


def resolve(spec: str) -> RunConfig:
    """A path to a JSON file, or the name of a shipped preset."""
    if Path(spec).exists() or spec.endswith(".json") and spec[:-5] not in PRESETS:
        return RunConfig.load(spec)
    name = spec[:-5] if spec.endswith(".json") else spec
    return load_preset(name)
