"""Experiment configuration, orchestration and trace files.

Configs are INI documents with one section per concern::

    [run]          algorithm, G, byz_count, T, seed, record_lyapunov, lyapunov_eta, output
    [problem]      kind (quadratic | logreg) and its generator parameters
    [hyperparams]  gamma, beta, beta_hat, tau, tau_inner, batch
    [privacy]      sigma_omega (number or "auto"), epsilon, delta, calibration
    [attack]       kind, scale
    [aggregator]   kind, nnm, assumed_byz_count

A trace file is a ``#``-prefixed JSON header line, CSV step rows and a
``#``-prefixed JSON summary line. Wall-clock time is kept on the in-memory
trace only, so identical configs give byte-identical files.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
import statistics
import tempfile
import time
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algorithm as alg
from .aggregation import AggregatorSpec
from .attack import AttackSpec
from .core import ClientState, NumericAbort, ServerState, Streams
from .privacy import DPConfig, sigma_amplified, sigma_for_budget, sigma_heuristic
from .problem import load_dataset, make_blobs, make_logreg, make_quadratic, measure_zeta

log = logging.getLogger(__name__)

TRACE_MAGIC = "# byzdp-trace v1"
COLUMNS = ("t", "grad_norm_sq", "f_gap", "lyapunov", "clip_active_frac")
CALIBRATIONS = ("composition", "heuristic", "amplified")


class ConfigError(ValueError):
    pass


HyperParams = alg.HyperParams


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "quadratic"
    # quadratic
    d: int = 10
    zeta: float = 1.0
    L: float = 1.0
    mu: float = 0.1
    sigma_noise: float = 0.0
    center_scale: float = 1.0
    x0_dist: float = 5.0
    # logistic regression
    num_examples: int = 600
    num_features: int = 5
    num_classes: int = 3
    separation: float = 2.0
    reg: float = 0.01
    batch: int = 0
    data_path: str = ""


@dataclass(frozen=True)
class PrivacySpec:
    sigma_omega: typing.Optional[float] = 0.0
    epsilon: float = 1.0
    delta: float = 1e-5
    calibration: str = "composition"


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "byz_clip21_sgd2m"
    G: int = 10
    byz_count: int = 0
    T: int = 100
    seed: int = 0
    record_lyapunov: bool = False
    lyapunov_eta: typing.Optional[float] = None
    output: str = ""
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    hp: HyperParams = field(default_factory=lambda: alg.HyperParams(gamma=0.1))
    privacy: PrivacySpec = field(default_factory=PrivacySpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    agg: AggregatorSpec = field(default_factory=AggregatorSpec)

    @property
    def n(self) -> int:
        return self.G + self.byz_count

    def validate(self) -> None:
        try:
            self._validate()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self):
        if self.algorithm not in alg.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.G < 1 or self.byz_count < 0 or self.T < 0:
            raise ConfigError("need G >= 1, byz_count >= 0, T >= 0")
        if 2 * self.byz_count >= self.n:
            raise ConfigError("Byzantine fraction must stay below 1/2")
        self.agg.validate(self.n)
        if self.problem.kind not in ("quadratic", "logreg"):
            raise ConfigError(f"unknown problem kind {self.problem.kind!r}")
        if self.attack.data_level and self.problem.kind != "logreg":
            raise ConfigError("label flipping needs a classification problem")
        if self.algorithm == "plus" and self.problem.kind != "logreg":
            raise ConfigError("the sub-sampled variant needs a finite-sum problem")
        if self.algorithm == "no_dp":
            if not (math.isinf(self.hp.tau) and self.hp.beta_hat == 1):
                raise ConfigError("no_dp requires tau = inf and beta_hat = 1")
            if self.privacy.sigma_omega != 0:
                raise ConfigError("no_dp runs without DP noise")
        p = self.privacy
        if p.calibration not in CALIBRATIONS:
            raise ConfigError(f"unknown calibration {p.calibration!r}")
        if p.sigma_omega is not None and not (p.sigma_omega >= 0 and math.isfinite(p.sigma_omega)):
            raise ConfigError("sigma_omega must be finite and >= 0")
        if self.lyapunov_eta is not None and not self.lyapunov_eta > 0:
            raise ConfigError("lyapunov_eta must be positive")


SECTIONS = {
    "problem": ("problem", ProblemSpec),
    "hyperparams": ("hp", HyperParams),
    "privacy": ("privacy", PrivacySpec),
    "attack": ("attack", AttackSpec),
    "aggregator": ("agg", AggregatorSpec),
}
NESTED = {attr for attr, _ in SECTIONS.values()}


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.lower() in ("auto", "none", ""):
            return None
        return _convert(raw, args[0])
    if hint is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if hint is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"not an integer: {raw!r}") from None
    if hint is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"not a number: {raw!r}") from None
    return raw


def _hints(cls):
    return typing.get_type_hints(cls, globalns=vars(alg) | globals())


def _build(cls, values: dict):
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {k: _convert(v, hints[k]) if isinstance(v, str) else v for k, v in values.items()}
    if cls is HyperParams and "gamma" not in kwargs:
        raise ConfigError("hyperparams.gamma is required")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"run": {f.name: _format(getattr(cfg, f.name)) for f in dataclasses.fields(cfg) if f.name not in NESTED}}
    for section, (attr, cls) in SECTIONS.items():
        obj = getattr(cfg, attr)
        out[section] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(cls) if f.init}
    return out


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    kwargs = {}
    for section, (attr, cls) in SECTIONS.items():
        if section in data:
            kwargs[attr] = _build(cls, dict(data[section]))
    run_values = dict(data.get("run", {}))
    hints = _hints(RunConfig)
    names = {f.name for f in dataclasses.fields(RunConfig)} - NESTED
    bad = set(run_values) - names
    if bad:
        raise ConfigError(f"unknown keys in [run]: {sorted(bad)}")
    for k, v in run_values.items():
        kwargs[k] = _convert(v, hints[k]) if isinstance(v, str) else v
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def serialize_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in config_to_dict(cfg).items():
        parser[section] = values
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return config_from_dict({s: dict(parser[s]) for s in parser.sections()})


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Return a copy with ``{"section.key": value}`` overrides applied."""
    data = config_to_dict(cfg)
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in data or key not in data[section]:
            raise ConfigError(f"no such config field {dotted!r}")
        data[section][key] = value if isinstance(value, str) else _format(value)
    return config_from_dict(data)


# --- traces -----------------------------------------------------------------


@dataclass
class RunTrace:
    header: dict
    rows: list
    summary: dict
    wall_time: float = field(default=0.0, compare=False)

    @property
    def config(self) -> RunConfig:
        return config_from_dict(self.header["config"])

    @property
    def tail_metric(self) -> float:
        return self.summary["tail_grad_norm_sq"]


def _cell(v) -> str:
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def emit_trace(trace: RunTrace) -> str:
    buf = io.StringIO()
    buf.write(TRACE_MAGIC + "\n")
    buf.write("# header: " + json.dumps(trace.header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in trace.rows:
        w.writerow([_cell(getattr(r, c)) for c in COLUMNS])
    buf.write("# summary: " + json.dumps(trace.summary, sort_keys=True) + "\n")
    return buf.getvalue()


def trajectory_text(trace: RunTrace) -> str:
    """The emitted trace minus its config header: step rows plus summary.

    Two runs whose configs differ only in an inert field (say the attack
    with no Byzantine slots) are expected to agree on this text byte for byte.
    """
    return "".join(line for line in emit_trace(trace).splitlines(keepends=True)
                   if not line.startswith("# header: "))


def parse_trace(text: str) -> RunTrace:
    lines = text.splitlines()
    if not lines or lines[0] != TRACE_MAGIC:
        raise ValueError("not a byzdp trace")
    header = summary = None
    body = []
    for line in lines[1:]:
        if line.startswith("# header: "):
            header = json.loads(line[len("# header: "):])
        elif line.startswith("# summary: "):
            summary = json.loads(line[len("# summary: "):])
        else:
            body.append(line)
    reader = csv.reader(body)
    cols = next(reader)
    if tuple(cols) != COLUMNS:
        raise ValueError(f"unexpected columns {cols}")
    rows = []
    for rec in reader:
        t, gn, fg, ly, cf = rec
        rows.append(alg.StepRecord(int(t), float(gn), float(fg) if fg else None, float(ly) if ly else None, float(cf)))
    return RunTrace(header, rows, summary)


def read_trace(path) -> RunTrace:
    return parse_trace(Path(path).read_text())


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(trace: RunTrace, path) -> None:
    write_atomic(path, emit_trace(trace))


# --- building a run ------------------------------------------------------------


def build_problem(cfg: RunConfig, streams: Streams):
    """Instantiate the problem and the starting point from the run seed."""
    p = cfg.problem
    data_rng = streams.get(0, "data", 0)
    init_rng = streams.get(0, "init", 0)
    if p.kind == "quadratic":
        prob = make_quadratic(cfg.G, p.d, p.zeta, p.L, p.mu, data_rng, p.sigma_noise, p.center_scale)
        u = init_rng.standard_normal(prob.d)
        x0 = prob.x_star + p.x0_dist * u / np.linalg.norm(u)
        return prob, x0
    if p.data_path:
        data = load_dataset(p.data_path, p.num_features)
    else:
        data = make_blobs(p.num_examples, p.num_features, p.num_classes, data_rng, p.separation)
    poison = cfg.attack.data_level
    prob = make_logreg(data, cfg.G, cfg.byz_count if poison else 0, p.num_classes, data_rng,
                       reg=p.reg, batch=p.batch or None, poison=poison)
    if p.reg > 0:
        prob.solve_f_star()
    return prob, np.zeros(prob.d)


def resolve_dp(cfg: RunConfig, problem) -> DPConfig:
    p, hp = cfg.privacy, cfg.hp
    if p.sigma_omega is not None:
        return DPConfig(p.epsilon, p.delta, hp.tau, cfg.T, p.sigma_omega)
    if p.calibration == "composition":
        sigma = sigma_for_budget(hp.tau, p.epsilon, p.delta, cfg.T)
    elif p.calibration == "heuristic":
        sigma = sigma_heuristic(hp.tau, p.epsilon, p.delta, cfg.T)
    else:
        if not getattr(problem, "finite_sum", False):
            raise ConfigError("amplified calibration needs a finite-sum problem")
        m = min(problem.local_size(i) for i in range(problem.G))
        sigma = sigma_amplified(hp.tau_inner, p.epsilon, p.delta, cfg.T, min(hp.batch, m), m)
    return DPConfig(p.epsilon, p.delta, hp.tau, cfg.T, sigma)


def _summary(rows, x_final, aborted_at=None) -> dict:
    g = np.array([r.grad_norm_sq for r in rows], dtype=np.float64)
    tail = g[-max(1, math.ceil(len(g) / 10)):] if len(g) else g
    last_gap = rows[-1].f_gap if rows else None
    return {
        "mean_grad_norm_sq": float(g.mean()) if len(g) else None,
        "tail_grad_norm_sq": float(tail.mean()) if len(g) else None,
        "final_f_gap": last_gap,
        "aborted_at": aborted_at,
        "x_final": [float(v) for v in x_final],
    }


def run(cfg: RunConfig, output=None) -> RunTrace:
    """Execute one configured run and return its trace.

    The trace is written to ``output`` (or ``cfg.output``) when a path is
    given. A non-finite state raises :class:`NumericAbort` carrying the
    partial trace; nothing is written in that case.
    """
    cfg.validate()
    start = time.perf_counter()
    streams = Streams(cfg.seed)
    try:
        problem, x0 = build_problem(cfg, streams)
        dp = resolve_dp(cfg, problem)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    eta = None
    if cfg.record_lyapunov and cfg.algorithm in ("byz_clip21_sgd2m", "plus"):
        eta = cfg.lyapunov_eta if cfg.lyapunov_eta is not None else alg.eta_from_state(cfg.hp.tau, problem, x0)
    zeta_max, zeta_avg = measure_zeta(problem, x0)
    header = {
        "config": config_to_dict(cfg),
        "sigma_omega": dp.sigma_omega,
        "zeta_max": zeta_max,
        "zeta_avg": zeta_avg,
        "L": problem.L,
        "f_star": problem.f_star,
        "d": int(problem.d),
        "lyapunov_eta": eta,
    }
    server = ServerState.initial(x0, cfg.n, cfg.G)
    clients = ClientState.zeros(problem.num_workers, problem.d)
    step = alg.STEPS[cfg.algorithm]
    rows = []
    for t in range(cfg.T):
        try:
            server, clients, rec = step(server, clients, cfg.hp, dp, problem, cfg.attack, cfg.agg, streams, t,
                                        lyapunov_eta=eta)
        except NumericAbort as exc:
            exc.partial = RunTrace(header, rows, _summary(rows, server.x, aborted_at=t),
                                   time.perf_counter() - start)
            raise
        rows.append(rec)
    trace = RunTrace(header, rows, _summary(rows, server.x), time.perf_counter() - start)
    target = output if output is not None else cfg.output
    if target:
        write_trace(trace, target)
    return trace


# --- grids and summaries ----------------------------------------------------------


def expand_grid(base: RunConfig, sweep: dict) -> list:
    """Cartesian product of the sweep; run ``k`` gets seed ``base.seed + k``
    unless the sweep sets ``run.seed`` itself."""
    keys = list(sweep)
    combos = list(itertools.product(*(sweep[k] for k in keys))) if keys else [()]
    out = []
    for k, values in enumerate(combos):
        overrides = dict(zip(keys, values))
        if "run.seed" not in overrides:
            overrides["run.seed"] = base.seed + k
        out.append((overrides, with_overrides(base, overrides)))
    return out


def _run_safely(cfg: RunConfig) -> RunTrace:
    try:
        return run(cfg, output="")
    except NumericAbort as exc:
        log.warning("run aborted at step %s: %s", exc.step, exc)
        return exc.partial


def worker_count(jobs: int) -> int:
    cap = os.environ.get("BYZDP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, jobs))


def grid(base: RunConfig, sweep: dict, out_dir=None, workers: int | None = None) -> list:
    """Run every combination of ``sweep`` overrides.

    Aborted runs come back as partial traces whose summary has
    ``aborted_at`` set. With ``out_dir`` each trace is written there along
    with ``index.csv``.
    """
    jobs = expand_grid(base, sweep)
    for _, cfg in jobs:
        cfg.validate()
    workers = worker_count(len(jobs)) if workers is None else workers
    cfgs = [cfg for _, cfg in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_safely, cfgs))
    else:
        traces = [_run_safely(c) for c in cfgs]
    if out_dir is not None:
        out_dir = Path(out_dir)
        index = io.StringIO()
        w = csv.writer(index, lineterminator="\n")
        w.writerow(["index", "seed", "overrides", "path", "status", "tail_grad_norm_sq"])
        for k, ((overrides, cfg), tr) in enumerate(zip(jobs, traces)):
            path = out_dir / f"run_{k:04d}.csv"
            write_trace(tr, path)
            status = "ok" if tr.summary["aborted_at"] is None else f"aborted@{tr.summary['aborted_at']}"
            w.writerow([k, cfg.seed, json.dumps(overrides, sort_keys=True), path.name, status,
                        _cell(tr.summary["tail_grad_norm_sq"])])
        write_atomic(out_dir / "index.csv", index.getvalue())
    return traces


def trace_score(trace: RunTrace, metric: str = "tail_grad_norm_sq") -> float:
    v = trace.summary.get(metric)
    if trace.summary.get("aborted_at") is not None or v is None or not math.isfinite(v):
        return math.inf
    return v


def select_best(traces, metric: str = "tail_grad_norm_sq") -> RunTrace:
    return min(traces, key=lambda tr: trace_score(tr, metric))


METRICS = ("mean_grad_norm_sq", "tail_grad_norm_sq", "final_f_gap")


def _group_key(trace: RunTrace) -> str:
    cfg = dict((s, dict(v)) for s, v in trace.header["config"].items())
    cfg["run"].pop("seed", None)
    cfg["run"].pop("output", None)
    return json.dumps(cfg, sort_keys=True)


def _aggregate_group(traces) -> dict:
    row = {"n_runs": len(traces), "seeds": " ".join(str(t.header["config"]["run"]["seed"]) for t in traces)}
    for m in METRICS:
        vals = [t.summary.get(m) for t in traces]
        if any(v is None for v in vals):
            continue
        # statistics works in exact arithmetic, so equal inputs give std 0
        row[m + "_mean"] = statistics.fmean(vals)
        row[m + "_std"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return row


def summarize(traces) -> dict:
    """Mean and sample std of each summary metric across seeds of one config."""
    if not traces:
        raise ValueError("nothing to summarize")
    keys = {_group_key(t) for t in traces}
    if len(keys) > 1:
        raise ValueError("traces come from different configurations")
    return _aggregate_group(list(traces))


def summarize_groups(traces) -> list:
    groups: dict = {}
    for t in traces:
        groups.setdefault(_group_key(t), []).append(t)
    out = []
    for key, members in groups.items():
        row = {"config": key}
        row.update(_aggregate_group(members))
        out.append(row)
    return out


def table_to_csv(rows) -> str:
    rows = [rows] if isinstance(rows, dict) else list(rows)
    cols = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()
