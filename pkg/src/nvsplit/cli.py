"""Command-line frontend: ``nvsplit price|converge|bench <config>``.

``<config>`` is a JSON file or the name of a shipped preset. Exit status is 0 on
success, 2 for invalid input and 3 when a computation fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys

from . import pricing
from .config import ConfigError, RunConfig, resolve
from .errors import ParameterError
from .qmc import SCHEMES

log = logging.getLogger("nvsplit")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nvsplit", description="Weak-order SDE schemes for stochastic volatility models.")
    p.add_argument("command", choices=("price", "converge", "bench"))
    p.add_argument("config", help="JSON config file or preset name")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: all cores)")
    p.add_argument("--output", help="CSV destination (default: stdout)")
    p.add_argument("--schemes", help="comma-separated subset of schemes, e.g. euler,nvd")
    p.add_argument("--fusion", action="store_true", help="merge adjacent drift half-steps")
    p.add_argument("--seed", type=int, help="seed for the mc sequence (ignored for sobol)")
    p.add_argument("--M", type=int, dest="M", help="override the number of trajectories")
    p.add_argument("--K", type=int, dest="K", help="override the step count of `price`")
    p.add_argument("--K-grid", dest="K_grid", help="override the step grid, e.g. 4,8,16")
    p.add_argument("--timing", action="store_true", help="fill wall_seconds for price/converge")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _int_list(text: str, what: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers, got {text!r}") from None


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.schemes is not None:
        chosen = [s.strip() for s in args.schemes.split(",") if s.strip()]
        bad = [s for s in chosen if s not in SCHEMES]
        if bad or not chosen:
            raise ConfigError(f"--schemes must name schemes from {', '.join(SCHEMES)}, got {args.schemes!r}")
        cfg.schemes = chosen
    if args.seed is not None:
        if cfg.sequence == "sobol":
            log.warning("--seed is ignored for the sobol sequence")
        else:
            cfg.seed = args.seed
    if args.M is not None:
        cfg.M = args.M
    if args.K is not None:
        cfg.K = args.K
    if args.K_grid is not None:
        cfg.K_grid = _int_list(args.K_grid, "--K-grid")
    if args.output is not None:
        cfg.output = args.output
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg.validate()
    return cfg


def _emit(rows, path):
    if path:
        pricing.write_csv(path, rows)
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=pricing.CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    sys.stdout.write(buf.getvalue())


def run(cfg: RunConfig, command: str, threads: int, fusion: bool = False, timing: bool = False):
    """Execute ``command`` and return the CSV rows."""
    model = cfg.build_model()
    payoff = cfg.build_payoff()
    kw = dict(sequence=cfg.sequence, seed=cfg.seed, threads=threads, fusion=fusion)
    if command == "price":
        rep = pricing.price(model, cfg.scheme, payoff, cfg.K, cfg.M, cfg.T, cfg.x0, reference=cfg.reference, **kw)
        log.info("%s %s K=%d M=%d estimate=%.10g se=%.3g", rep.model, rep.scheme, rep.K, rep.M,
                 rep.estimate, rep.std_error)
        return [rep.row(timing=timing)]
    if cfg.reference is None:
        raise ConfigError(f"{command} needs a reference value in the config")
    if command == "converge":
        study = pricing.convergence_study(model, payoff, cfg.schemes, cfg.K_grid, cfg.M, cfg.T, cfg.x0,
                                          cfg.reference, **kw)
        return list(study.rows(timing=timing))
    configs = cfg.bench_configs()
    if not configs:
        raise ConfigError("no bench configurations left after scheme selection")
    fixed = cfg.bench.get("M")
    rows = pricing.timing_comparison(model, payoff, configs, cfg.T, cfg.x0, cfg.reference,
                                     cfg.timing_protocol(), fixed_M=fixed, **kw)
    out = []
    for r in rows:
        if r.report is None:
            out.append({"model": model.name, "scheme": r.scheme, "K": r.K, "M": "", "estimate": "", "ref":
                        repr(cfg.reference), "rel_error": "", "slope": "", "wall_seconds": "",
                        "oracle_calls": "", "clamp_hits": ""})
        else:
            out.append(r.report.row(timing=True))
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _apply_overrides(resolve(args.config), args)
    except (ParameterError, ValueError) as exc:
        print(f"nvsplit: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.dump_config:
        sys.stdout.write(cfg.dumps())
        return EXIT_OK
    try:
        rows = run(cfg, args.command, args.threads, args.fusion, args.timing)
        _emit(rows, cfg.output)
    except ConfigError as exc:
        print(f"nvsplit: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any failure after validation is a runtime error
        print(f"nvsplit: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
