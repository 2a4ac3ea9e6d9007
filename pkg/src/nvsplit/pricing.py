"""Expectation estimates over QMC/MC trajectory batches, convergence studies and
the run-time comparison protocol."""

from __future__ import annotations

import csv
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .flows import Diagnostics
from .ode import IN_SCHEME_CONFIG
from .qmc import DimensionLayout, draw_trajectory, inverse_normal_cdf, make_source
from .schemes import girsanov_weight, simulate_trajectory

CHUNK = 2**15

# Reference prices of the three benchmark experiments (call/basket, T=1, strike 1.05).
# SABR: obtained by extrapolating long runs of the schemes themselves.
SABR_REFERENCE = 0.09400046
# Generalized SABR: long NV run.
GENSABR_REFERENCE = 0.1767505855
# Four-asset basket: long NV run.
MULTISABR_REFERENCE = 0.09254183

CSV_COLUMNS = ("model", "scheme", "K", "M", "estimate", "ref", "rel_error", "slope",
               "wall_seconds", "oracle_calls", "clamp_hits")


@dataclass(frozen=True)
class Payoff:
    kind: str = "european-call"
    strike: float = 1.05
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("european-call", "basket-call"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if not self.strike >= 0:
            raise ValueError("strike must be non-negative")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("basket weights must be non-negative and sum to 1")

    def __call__(self, prices):
        prices = np.asarray(prices, dtype=float)
        if self.kind == "european-call":
            return np.maximum(prices[0] - self.strike, 0.0)
        n = prices.shape[0]
        w = np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.size != n:
            raise ValueError(f"basket has {w.size} weights for {n} assets")
        return np.maximum(np.tensordot(w, prices, axes=1) - self.strike, 0.0)


@dataclass
class EstimateReport:
    model: str
    scheme: str
    K: int
    M: int
    estimate: float
    std_error: float
    sequence: str
    wall_seconds: float
    reference: float | None = None
    rel_error: float | None = None
    oracle_calls: int = 0
    clamp_hits: int = 0

    def row(self, slope: float | None = None, timing: bool = True) -> dict:
        return {
            "model": self.model, "scheme": self.scheme, "K": self.K, "M": self.M,
            "estimate": repr(self.estimate),
            "ref": "" if self.reference is None else repr(self.reference),
            "rel_error": "" if self.rel_error is None else repr(self.rel_error),
            "slope": "" if slope is None else repr(slope),
            "wall_seconds": f"{self.wall_seconds:.4f}" if timing else "",
            "oracle_calls": self.oracle_calls, "clamp_hits": self.clamp_hits,
        }


def _chunk_moments(model, scheme, K, T, x0, source, layout, start, count, func, shift, fusion, cfg):
    pts = source.uniforms(start, count)
    draw = draw_trajectory(layout, pts)
    out = simulate_trajectory(scheme, model, K, T, x0, draw, shift=shift, fusion=fusion, cfg=cfg)
    vals = func(out.terminal) * out.weight
    return float(np.sum(vals)), float(np.sum(vals * vals)), out.diagnostics


def estimate(model, scheme: str, K: int, M: int, T: float, x0, func, sequence: str = "sobol",
             seed: int = 0, threads: int | None = 1, shift=None, fusion: bool = False,
             cfg=IN_SCHEME_CONFIG, chunk: int = CHUNK):
    """Mean and standard error of ``weight * func(terminal)`` over ``M`` trajectories.

    Trajectory ``i`` uses point ``i + 1`` of the sequence (the origin is
    skipped). Work is split into fixed chunks whose partial sums are combined
    with ``math.fsum`` so the result does not depend on ``threads``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    layout = DimensionLayout(K, model.n_noise, scheme)
    source = make_source(sequence, layout.D, seed)
    x0 = np.asarray(x0, dtype=float)
    starts = list(range(1, M + 1, chunk))

    def work(start):
        count = min(chunk, M + 1 - start)
        return _chunk_moments(model, scheme, K, T, x0, source, layout, start, count, func, shift, fusion, cfg)

    t0 = time.perf_counter()
    if threads is None or threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    wall = time.perf_counter() - t0

    total = math.fsum(p[0] for p in parts)
    total2 = math.fsum(p[1] for p in parts)
    mean = total / M
    var = max(total2 - total * mean, 0.0) / (M - 1) if M > 1 else 0.0
    diag = Diagnostics()
    diag.oracle_calls = parts[0][2].oracle_calls
    diag.clamp_hits = sum(p[2].clamp_hits for p in parts)
    return mean, math.sqrt(var / M), diag, wall, source.describe()


def price(model, scheme: str, payoff: Payoff, K: int, M: int, T: float, x0, *, reference: float | None = None,
          sequence: str = "sobol", seed: int = 0, threads: int | None = 1, shift=None, fusion: bool = False,
          cfg=IN_SCHEME_CONFIG) -> EstimateReport:
    """Price ``payoff`` with ``scheme``; ``x0`` is given in natural coordinates."""
    x0c = model.chart_state(x0)
    func = lambda x: payoff(model.asset_prices(x))  # noqa: E731
    mean, se, diag, wall, seq = estimate(model, scheme, K, M, T, x0c, func, sequence, seed, threads,
                                         shift, fusion, cfg)
    rel = None if reference is None else abs(mean - reference) / abs(reference)
    return EstimateReport(model.name, scheme, K, M, mean, se, seq, wall, reference, rel,
                          diag.oracle_calls, diag.clamp_hits)


# ------------------------------------------------------------ convergence


def fit_slope(Ks, errors) -> float | None:
    """Least-squares slope of ``log2(error)`` against ``log2(K)``; ``None`` if degenerate."""
    Ks = np.asarray(Ks, dtype=float)
    err = np.asarray(errors, dtype=float)
    if Ks.size < 2 or np.any(err <= 1e-14) or not np.all(np.isfinite(err)):
        return None
    return float(np.polyfit(np.log2(Ks), np.log2(err), 1)[0])


@dataclass
class ConvergenceStudy:
    schemes: tuple[str, ...]
    K_grid: tuple[int, ...]
    M: int
    reference: float
    reports: list[EstimateReport] = field(default_factory=list)
    slopes: dict[str, float | None] = field(default_factory=dict)

    def rows(self, timing: bool = False):
        for r in self.reports:
            yield r.row(self.slopes.get(r.scheme), timing)


def convergence_study(model, payoff: Payoff, schemes, K_grid, M: int, T: float, x0, reference: float,
                      **kw) -> ConvergenceStudy:
    if reference is None:
        raise ValueError("a reference value is required")
    if not K_grid:
        raise ValueError("K grid is empty")
    study = ConvergenceStudy(tuple(schemes), tuple(K_grid), M, reference)
    for scheme in schemes:
        reps = [price(model, scheme, payoff, K, M, T, x0, reference=reference, **kw) for K in K_grid]
        study.reports.extend(reps)
        study.slopes[scheme] = fit_slope(K_grid, [r.rel_error for r in reps])
    return study


def self_reference(model, payoff: Payoff, scheme: str, K: int, M: int, T: float, x0, **kw) -> float:
    """Reference value taken from a single long run."""
    return price(model, scheme, payoff, K, M, T, x0, **kw).estimate


# ----------------------------------------------------------------- timing


@dataclass
class TimingProtocol:
    M0: int = 1000
    threshold: float = 2e-5
    consecutive: int = 2
    M_cap: int = 2**24
    M_truth: int = 2**20
    repeats: int = 3


@dataclass
class TimingRow:
    scheme: str
    K: int
    M: int | None
    rel_error: float | None
    wall_seconds: float | None
    converged: bool
    report: EstimateReport | None = None


def choose_M(model, payoff, scheme, K, T, x0, reference, protocol: TimingProtocol, **kw):
    """Double ``M`` from ``M0`` until the estimate stays within ``threshold`` of the
    large-``M`` estimate for ``consecutive`` doublings; returns the first such ``M``
    (``None`` when ``M_cap`` is exceeded)."""
    truth = price(model, scheme, payoff, K, protocol.M_truth, T, x0, reference=reference, **kw).estimate
    M, run, first = protocol.M0, 0, None
    while M <= protocol.M_cap:
        est = price(model, scheme, payoff, K, M, T, x0, reference=reference, **kw).estimate
        if abs(est - truth) < protocol.threshold:
            run += 1
            first = M if run == 1 else first
            if run >= protocol.consecutive:
                return first
        else:
            run, first = 0, None
        M *= 2
    return None


def time_run(model, payoff, scheme, K, M, T, x0, reference, repeats: int = 3, **kw):
    """One discarded warm-up run, then the median wall time of ``repeats`` runs."""
    price(model, scheme, payoff, K, min(M, 4096), T, x0, reference=reference, **kw)
    reps = [price(model, scheme, payoff, K, M, T, x0, reference=reference, **kw) for _ in range(repeats)]
    rep = reps[0]
    rep.wall_seconds = statistics.median(r.wall_seconds for r in reps)
    return rep


def timing_comparison(model, payoff: Payoff, configs, T: float, x0, reference: float,
                      protocol: TimingProtocol | None = None, fixed_M: int | None = None, **kw):
    """Run-time table for ``configs`` = iterable of ``(scheme, K)``.

    With ``fixed_M`` every method runs at that ``M``; otherwise ``M`` follows the
    doubling protocol.
    """
    protocol = protocol or TimingProtocol()
    rows = []
    for scheme, K in configs:
        M = fixed_M if fixed_M is not None else choose_M(model, payoff, scheme, K, T, x0, reference, protocol, **kw)
        if M is None:
            rows.append(TimingRow(scheme, K, None, None, None, False))
            continue
        rep = time_run(model, payoff, scheme, K, M, T, x0, reference, protocol.repeats, **kw)
        rows.append(TimingRow(scheme, K, M, rep.rel_error, rep.wall_seconds, True, rep))
    return rows


# --------------------------------------------------------------- Girsanov


@dataclass
class WeightStats:
    mean: float
    variance: float
    std_error: float
    exact_variance: float


def girsanov_weight_stats(shift, T: float, K: int, M: int, sequence: str = "sobol", seed: int = 0,
                          chunk: int = 8 * CHUNK) -> WeightStats:
    """Sample mean and variance of the density ``E(T)`` built from the increments alone.

    Uses the same point layout as the weighted scheme, skipping the order
    coins; the state path is not needed since ``E(T)`` depends on ``B_T`` only.
    """
    d = shift.gamma.size
    layout = DimensionLayout(K, d, "nvg")
    cols = np.array([k * layout.per_step + j for k in range(K) for j in range(d)])
    source = make_source(sequence, layout.D, seed)
    s1, s2 = [], []
    for start in range(1, M + 1, chunk):
        count = min(chunk, M + 1 - start)
        z = inverse_normal_cdf(source.uniforms(start, count, cols)).reshape(count, K, d)
        B = math.sqrt(T / K) * z.sum(axis=1).T
        w = girsanov_weight(shift, B, T)
        s1.append(float(np.sum(w)))
        s2.append(float(np.sum(w * w)))
    t1, t2 = math.fsum(s1), math.fsum(s2)
    mean = t1 / M
    var = max(t2 - t1 * mean, 0.0) / (M - 1)
    exact = math.expm1(float(shift.gamma @ shift.gamma) * T)
    return WeightStats(mean, var, math.sqrt(var / M), exact)


# ------------------------------------------------------------ mean factor


def mean_factor_check(model, scheme: str, K: int, M: int, T: float, x0, **kw) -> float:
    """Relative deviation of the estimated ``E[X2(T)]`` from ``theta + (x2 - theta) exp(-kappa T)``."""
    p = model.params
    x0 = np.asarray(x0, dtype=float)
    target = p.theta + (x0[1] - p.theta) * math.exp(-p.kappa * T)
    mean = estimate(model, scheme, K, M, T, model.chart_state(x0), lambda x: x[1], **kw)[0]
    return abs(mean - target) / abs(target)


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


__all__ = [
    "CHUNK", "CSV_COLUMNS", "ConvergenceStudy", "EstimateReport", "GENSABR_REFERENCE", "MULTISABR_REFERENCE",
    "Payoff", "SABR_REFERENCE", "TimingProtocol", "TimingRow", "convergence_study", "estimate",
    "fit_slope", "girsanov_weight_stats", "mean_factor_check", "price", "self_reference", "timing_comparison", "write_csv",
]
