"""Command line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 numeric abort.
"""
from __future__ import annotations

import argparse
import configparser
import glob
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .aggregation import KINDS as AGG_KINDS
from .aggregation import AggregatorSpec, certify_robustness
from .core import NumericAbort
from .harness import ConfigError
from .privacy import composed_budget, per_step_budget, sigma_for_budget


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="byzdp", description="Byzantine-robust DP optimization simulator")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    r = sub.add_parser("run", help="execute one configured run")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="trace path (overrides run.output)")

    g = sub.add_parser("grid", help="sweep config fields")
    g.add_argument("--config", required=True)
    g.add_argument("--sweep", required=True, help="INI file with a [sweep] section of 'section.key = v1, v2'")
    g.add_argument("--out", help="directory for traces and index.csv")

    c = sub.add_parser("certify-agg", help="brute-force robustness coefficient under an outlier attack")
    c.add_argument("--agg", required=True, choices=AGG_KINDS)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--byz", type=int, required=True)
    c.add_argument("--trials", type=int, default=1)
    c.add_argument("--nnm", action="store_true")
    c.add_argument("--dim", type=int, default=1)
    c.add_argument("--outlier", type=float, default=1e6, help="largest outlier magnitude")
    c.add_argument("--seed", type=int, default=0)

    pr = sub.add_parser("privacy", help="noise level for a privacy budget")
    pr.add_argument("--tau", type=float, required=True)
    pr.add_argument("--eps", type=float, required=True)
    pr.add_argument("--delta", type=float, required=True)
    pr.add_argument("--T", type=int, required=True)

    s = sub.add_parser("summarize", help="mean/std across seeds as CSV")
    s.add_argument("--glob", required=True, dest="pattern")
    s.add_argument("--group", action="store_true", help="group by config instead of requiring one config")
    s.add_argument("--out")
    return p


def read_sweep(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read sweep {path}: {exc}") from exc
    if not parser.has_section("sweep"):
        raise ConfigError("sweep file needs a [sweep] section")
    return {k: [v.strip() for v in raw.split(",") if v.strip()] for k, raw in parser["sweep"].items()}


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    cfg.validate()
    trace = harness.run(cfg, output=args.output)
    s = trace.summary
    print(f"T={len(trace.rows)} mean_grad_norm_sq={s['mean_grad_norm_sq']} "
          f"tail_grad_norm_sq={s['tail_grad_norm_sq']} wall={trace.wall_time:.2f}s")
    return 0


def _cmd_grid(args) -> int:
    cfg = harness.load_config(args.config)
    sweep = read_sweep(args.sweep)
    traces = harness.grid(cfg, sweep, out_dir=args.out)
    best = min(range(len(traces)), key=lambda k: harness.trace_score(traces[k]))
    print(f"runs={len(traces)} best_index={best} tail_grad_norm_sq={harness.trace_score(traces[best])}")
    print(json.dumps(traces[best].header["config"], sort_keys=True))
    return 0


def _cmd_certify(args) -> int:
    n, b = args.n, args.byz
    if not (0 < b and 2 * b < n):
        raise ConfigError("need 0 < byz < n/2")
    spec = AggregatorSpec(args.agg, nnm=args.nnm, assumed_byz_count=b)
    rng = np.random.default_rng(args.seed)
    mags = [args.outlier / 1e4, args.outlier / 1e2, args.outlier]
    worst = {M: 0.0 for M in mags}
    for _ in range(args.trials):
        honest = rng.standard_normal((n - b, args.dim))
        direction = rng.standard_normal(args.dim)
        direction /= np.linalg.norm(direction)
        for M in mags:
            msgs = np.vstack([honest, np.repeat((M * direction)[None, :], b, axis=0)])
            worst[M] = max(worst[M], certify_robustness(spec, msgs, b))
    for M in mags:
        print(f"outlier={M:.3g} c_hat={worst[M]:.6g}")
    lo, hi = worst[mags[0]], worst[mags[-1]]
    robust = math.isfinite(hi) and hi <= 10 * max(lo, 1e-300)
    print("ROBUST" if robust else "NOT-ROBUST")
    return 0


def _cmd_privacy(args) -> int:
    sigma = sigma_for_budget(args.tau, args.eps, args.delta, args.T)
    eps_step, delta_step = per_step_budget(args.eps, args.delta, args.T)
    eps_total, delta_total = composed_budget(args.tau, args.eps, args.delta, args.T)
    print(f"sigma_omega={sigma:.10g}")
    print(f"per_step_epsilon={eps_step:.10g} per_step_delta={delta_step:.10g}")
    print(f"composed_epsilon={eps_total:.10g} composed_delta={delta_total:.10g}")
    return 0


def _cmd_summarize(args) -> int:
    paths = sorted(glob.glob(args.pattern))
    if not paths:
        raise ConfigError(f"no trace files match {args.pattern!r}")
    traces = [harness.read_trace(p) for p in paths]
    rows = harness.summarize_groups(traces) if args.group else harness.summarize(traces)
    text = harness.table_to_csv(rows)
    if args.out:
        harness.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"run": _cmd_run, "grid": _cmd_grid, "certify-agg": _cmd_certify, "privacy": _cmd_privacy,
            "summarize": _cmd_summarize}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
