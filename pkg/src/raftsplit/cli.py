"""Command-line front end: analyze, simulate, compare, sweep, chain.

Every command builds a :class:`Report` (column names, rows, summary) that is
written as CSV or as a JSON ``{config, rows, summary}`` object. Floats are
written with 12 significant digits so outputs diff cleanly.

Exit codes: 0 success, 1 usage/config error, 2 comparison failure,
3 computational error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from raftsplit import numerics, split_model
from raftsplit.raft_sim import Fidelity, SimConfig, run_batch
from raftsplit.split_model import ModelParams, NonAbsorbingChainError
from raftsplit.stats import AllCensoredError, empirical_cdf, ks_distance, summarize

EXIT_OK, EXIT_USAGE, EXIT_COMPARE_FAIL, EXIT_COMPUTE = 0, 1, 2, 3

DEFAULTS: Dict[str, Any] = {
    "heartbeat_ms": 50.0,
    "latency_ms": "0.5:10",
    "fidelity": "lockstep",
    "trials": 10_000,
    "seed": 0,
    "max_steps": 1_000_000,
    "epsilon": split_model.DEFAULT_EPSILON,
    "step_cap": split_model.DEFAULT_STEP_CAP,
    "format": "csv",
    "ks_threshold": 0.03,
    "workers": 1,
}

COMMANDS = ("analyze", "simulate", "compare", "sweep", "chain")


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return format(float(x), ".12g")
    return str(x)


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            return fmt(x)
        return float(format(float(x), ".12g"))
    if isinstance(x, dict):
        return {str(k): _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    return x


@dataclass
class RunConfig:
    command: str
    model: Optional[ModelParams] = None
    sim: Optional[SimConfig] = None
    output_path: Optional[str] = None
    output_format: str = "csv"
    epsilon: float = split_model.DEFAULT_EPSILON
    step_cap: int = split_model.DEFAULT_STEP_CAP
    ks_threshold: float = 0.03
    check: Optional[bool] = None
    workers: int = 1
    # sweep axes
    grid_nodes: Tuple[int, ...] = ()
    grid_timeouts: Tuple[int, ...] = ()
    grid_losses: Tuple[float, ...] = ()

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.output_format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.model is not None and self.sim is not None:
            m, s = self.model, self.sim
            for name, mv, sv in (
                ("n_nodes", m.n_nodes, s.n_nodes),
                ("loss_rate", m.loss_rate, s.loss_rate),
                ("heartbeat_interval_ms", m.heartbeat_interval_ms, s.heartbeat_interval_ms),
            ):
                if mv != sv:
                    raise ConfigError(f"model and simulation disagree on {name}: {mv} vs {sv}")

    def describe(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"command": self.command, "format": self.output_format,
                             "epsilon": self.epsilon, "step_cap": self.step_cap}
        if self.model is not None:
            d["model"] = asdict(self.model)
        if self.sim is not None:
            s = asdict(self.sim)
            s["fidelity"] = self.sim.fidelity.value
            d["sim"] = s
        if self.command == "compare":
            d["ks_threshold"] = self.ks_threshold
        if self.command == "sweep":
            d["grid"] = {"nodes": list(self.grid_nodes), "timeout_steps": list(self.grid_timeouts),
                         "loss": list(self.grid_losses)}
        return d


@dataclass
class Report:
    columns: List[str]
    rows: List[Sequence[Any]]
    summary: Dict[str, Any]
    exit_code: int = EXIT_OK
    # secondary tables: name -> (columns, rows)
    extra: Dict[str, Tuple[List[str], List[Sequence[Any]]]] = field(default_factory=dict)


def _fundamental_summary(params: ModelParams) -> Dict[str, Any]:
    fm = split_model.fundamental_matrix(split_model.build_chain(params))
    return {"n11": fm.expected_heartbeats, "t_c": fm.time_to_candidate_steps,
            "t_in": fm.mean_receipt_interval_steps}


def cmd_analyze(config: RunConfig) -> Report:
    """Absorption curve, binomial/Poisson split CDFs and moments for one model."""
    params = config.model
    res = split_model.analyze(params, config.epsilon, config.step_cap)
    dist = res.binomial
    last = dist.truncation_step
    a = res.curve.values[: last + 1]
    poisson = split_model.poisson_split_cdf(a, params.n_nodes)
    rows = [
        (n, a[n], dist.cdf[n], dist.pdf[n], poisson[n]) for n in range(last + 1)
    ]
    h = params.heartbeat_interval_ms
    fm = res.fundamental
    summary = {
        "mean_steps": dist.mean_steps,
        "variance_steps": dist.variance_steps,
        "mean_ms": dist.mean_steps * h,
        "n11": fm.expected_heartbeats,
        "t_c": fm.time_to_candidate_steps,
        "t_in": fm.mean_receipt_interval_steps,
        "truncation_step": last,
        "truncated_tail_mass": dist.truncated_tail_mass,
        "truncated_by_cap": dist.truncated,
    }
    return Report(["step", "absorption_prob", "split_cdf", "split_pdf", "split_cdf_poisson"],
                  rows, summary)


def _simulate(config: RunConfig):
    outcomes = run_batch(config.sim, workers=config.workers)
    return outcomes


def cmd_simulate(config: RunConfig) -> Report:
    """Per-trial split times from the simulator, plus their empirical CDF."""
    sim = config.sim
    outcomes = _simulate(config)
    rows = [(o.trial, o.split_step, o.split_time_ms, o.censored, o.seed) for o in outcomes]
    ecdf = empirical_cdf(outcomes)
    s = summarize(outcomes)
    summary = {
        "trials": len(outcomes),
        "censored": s.censored_count,
        "mean_steps": s.mean,
        "variance_steps": s.variance,
        "mean_ms": s.mean * sim.heartbeat_interval_ms,
        **{f"q{int(round(q * 100)):02d}": v for q, v in s.quantiles.items()},
    }
    cdf_rows = list(zip(ecdf.steps.tolist(), ecdf.probabilities.tolist()))
    return Report(["trial", "split_step", "split_time_ms", "censored", "seed"], rows, summary,
                  extra={"cdf": (["step", "empirical_cdf"], cdf_rows)})


def cmd_compare(config: RunConfig) -> Report:
    """Overlay the analytical and simulated split CDFs and test their KS distance."""
    config.validate()
    params, sim = config.model, config.sim
    res = split_model.analyze(params, config.epsilon, config.step_cap)
    dist = res.binomial
    outcomes = _simulate(config)
    ecdf = empirical_cdf(outcomes)
    s = summarize(outcomes)
    last = max(dist.truncation_step, int(ecdf.steps[-1]))
    if ecdf.censored_count:
        last = min(last, sim.max_steps - 1)
    grid = np.arange(last + 1)
    analytical = np.asarray(dist.cdf)[np.minimum(grid, dist.truncation_step)]
    empirical = ecdf.at(grid)
    ks = float(np.max(np.abs(analytical - empirical)))
    check = config.check if config.check is not None else sim.fidelity is Fidelity.LOCKSTEP
    passed = ks < config.ks_threshold
    summary = {
        "ks_distance": ks,
        "ks_threshold": config.ks_threshold,
        "checked": check,
        "pass": passed,
        "analytical_mean_steps": dist.mean_steps,
        "empirical_mean_steps": s.mean,
        "empirical_standard_error": s.standard_error,
        "trials": len(outcomes),
        "censored": s.censored_count,
    }
    rows = list(zip(grid.tolist(), analytical.tolist(), empirical.tolist()))
    code = EXIT_COMPARE_FAIL if (check and not passed) else EXIT_OK
    return Report(["step", "analytical_cdf", "empirical_cdf"], rows, summary, exit_code=code)


def _sweep_point(args):
    n, k, p, h, eps, cap = args
    if p == 0.0:
        return (n, k, p, math.inf, math.inf, math.inf, math.inf, math.inf), False
    res = split_model.analyze(ModelParams(n, p, (k,), h), eps, cap)
    fm = res.fundamental
    d = res.binomial
    return (n, k, p, d.mean_steps, d.variance_steps, fm.expected_heartbeats,
            fm.time_to_candidate_steps, fm.mean_receipt_interval_steps), d.truncated


def cmd_sweep(config: RunConfig) -> Report:
    """One row per (N, K, p) grid point, in lexicographic grid order."""
    h = config.model.heartbeat_interval_ms if config.model else DEFAULTS["heartbeat_ms"]
    grid = [
        (n, k, p, h, config.epsilon, config.step_cap)
        for n, k, p in product(sorted(config.grid_nodes), sorted(config.grid_timeouts),
                               sorted(config.grid_losses))
    ]
    if not grid:
        raise ConfigError("sweep grid is empty")
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_sweep_point, grid))
    else:
        results = [_sweep_point(g) for g in grid]
    rows = [r for r, _ in results]
    truncated = [list(r[:3]) for r, t in results if t]
    summary = {"points": len(rows), "truncated_points": truncated}
    return Report(["N", "K", "p", "mean_steps", "variance_steps", "n11", "t_c", "t_in"],
                  rows, summary)


def cmd_chain(config: RunConfig) -> Report:
    """Dump P, Q, R and N = (I-Q)^-1 in long form plus the transience checks."""
    params = config.model
    chain = split_model.build_chain(params)
    mats = {"P": chain.full, "Q": chain.q_block, "R": chain.r_block}
    summary: Dict[str, Any] = {
        "transient_states": chain.transient_count,
        "absorbing_states": chain.absorbing_count,
        "dimension": chain.full.shape[0],
        "max_row_sum_error": float(np.abs(chain.full.sum(axis=1) - 1).max()),
    }
    bound = numerics.spectral_radius_bound(chain.q_block)
    summary["spectral_radius_bound"] = bound
    summary["spectral_bound_below_one"] = bound < 1.0
    if params.loss_rate > 0:
        summary["transient"] = numerics.verify_transience(chain.q_block)
        fm = split_model.fundamental_matrix(chain)
        mats["N"] = fm.n_matrix
        summary["fundamental_available"] = True
        summary.update(n11=fm.expected_heartbeats, t_c=fm.time_to_candidate_steps,
                       t_in=fm.mean_receipt_interval_steps)
    else:
        summary["transient"] = False
        summary["fundamental_available"] = False
        summary["note"] = "loss rate 0: no absorption, (I - Q)^-1 undefined"
    rows = []
    for name, m in mats.items():
        for i, j in product(range(m.shape[0]), range(m.shape[1])):
            rows.append((name, i, j, float(m[i, j])))
    return Report(["matrix", "row", "col", "value"], rows, summary)


HANDLERS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "chain": cmd_chain,
}


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def render_json(config: RunConfig, report: Report) -> str:
    doc = {
        "config": _json_value(config.describe()),
        "rows": [dict(zip(report.columns, _json_value(list(r)))) for r in report.rows],
        "summary": _json_value(report.summary),
    }
    for name, (cols, rows) in report.extra.items():
        doc[name] = [dict(zip(cols, _json_value(list(r)))) for r in rows]
    return json.dumps(doc, indent=1) + "\n"


def render_summary(summary: Dict[str, Any]) -> str:
    return "".join(f"{k}: {fmt(v) if not isinstance(v, list) else json.dumps(v)}\n"
                   for k, v in summary.items())


def _extra_path(out: Path, name: str) -> Path:
    return out.with_name(f"{out.stem}.{name}{out.suffix or '.csv'}")


def write_report(config: RunConfig, report: Report, stdout=None, stderr=None):
    """Write the table to ``--out`` (or stdout) and the summary to the other stream."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    if config.output_format == "json":
        text = render_json(config, report)
        if config.output_path:
            Path(config.output_path).write_text(text)
            stdout.write(render_summary(report.summary))
        else:
            stdout.write(text)
        return
    text = render_csv(report.columns, report.rows)
    if config.output_path:
        out = Path(config.output_path)
        out.write_text(text)
        for name, (cols, rows) in report.extra.items():
            _extra_path(out, name).write_text(render_csv(cols, rows))
        stdout.write(render_summary(report.summary))
    else:
        stdout.write(text)
        stderr.write(render_summary(report.summary))


# ---------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    # defaults are None so config-file values can slot in under explicit flags
    p.add_argument("--config", help="JSON file with flat key/value settings (flag names)")
    p.add_argument("--nodes", help="network size N (comma list for sweep)")
    p.add_argument("--loss", help="packet loss rate p (comma list for sweep)")
    p.add_argument("--timeout-steps", help="timeout K, or comma list forming the timeout set "
                                           "(for sweep: grid of single K values)")
    p.add_argument("--heartbeat-ms", type=float)
    p.add_argument("--timeout-range-ms", help="a:b election timeout range in ms")
    p.add_argument("--latency-ms", help="lo:hi message latency range in ms")
    p.add_argument("--fidelity", choices=[f.value for f in Fidelity])
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--step-cap", type=int)
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--out")
    p.add_argument("--ks-threshold", type=float)
    p.add_argument("--check", action=argparse.BooleanOptionalAction, default=None,
                   help="fail (exit 2) when KS exceeds the threshold; default on in lockstep")
    p.add_argument("--workers", type=int, help="processes for trials / sweep points")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raftsplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        _common(sub.add_parser(name, help=HANDLERS[name].__doc__.splitlines()[0]))
    return parser


def _pair(text, what) -> Tuple[float, float]:
    try:
        lo, hi = (float(x) for x in str(text).split(":"))
    except ValueError:
        raise ConfigError(f"{what} must look like lo:hi, got {text!r}") from None
    return lo, hi


def _list(text, cast, what) -> List:
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [x for x in str(text).split(",") if x.strip()]
    try:
        return [cast(x) for x in items]
    except ValueError:
        raise ConfigError(f"bad value for {what}: {text!r}") from None


def _merged_settings(ns: argparse.Namespace) -> Dict[str, Any]:
    settings = dict(DEFAULTS)
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {ns.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a flat JSON object")
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in vars(ns) or key in ("command", "config"):
                raise ConfigError(f"unknown config key {k!r}")
            settings[key] = v
    for k, v in vars(ns).items():
        if v is not None and k not in ("command", "config"):
            settings[k] = v
    return settings


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    s = _merged_settings(ns)
    cmd = ns.command
    cfg = RunConfig(
        command=cmd,
        output_path=s.get("out"),
        output_format=s["format"],
        epsilon=float(s["epsilon"]),
        step_cap=int(s["step_cap"]),
        ks_threshold=float(s["ks_threshold"]),
        check=s.get("check"),
        workers=int(s["workers"]),
    )
    h = float(s["heartbeat_ms"])
    if s.get("nodes") is None or s.get("loss") is None:
        raise ConfigError("--nodes and --loss are required")
    if cmd == "sweep":
        cfg.grid_nodes = tuple(_list(s["nodes"], int, "--nodes"))
        cfg.grid_losses = tuple(_list(s["loss"], float, "--loss"))
        if s.get("timeout_steps") is None:
            raise ConfigError("--timeout-steps is required for sweep")
        cfg.grid_timeouts = tuple(_list(s["timeout_steps"], int, "--timeout-steps"))
        try:
            for n, k, p in product(cfg.grid_nodes, cfg.grid_timeouts, cfg.grid_losses):
                ModelParams(n, p, (k,), h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg.model = ModelParams(cfg.grid_nodes[0], cfg.grid_losses[0], (cfg.grid_timeouts[0],), h)
        cfg.validate()
        return cfg

    try:
        n = int(s["nodes"])
        p = float(s["loss"])
    except ValueError:
        raise ConfigError("--nodes and --loss take a single value outside sweep") from None
    ks = _list(s["timeout_steps"], int, "--timeout-steps") if s.get("timeout_steps") is not None else None
    trange = _pair(s["timeout_range_ms"], "--timeout-range-ms") if s.get("timeout_range_ms") else None
    if ks is None and trange is None:
        raise ConfigError("give --timeout-steps or --timeout-range-ms")
    try:
        if ks is not None:
            cfg.model = ModelParams(n, p, tuple(ks), h)
        else:
            cfg.model = ModelParams.from_timeout_range(n, p, trange[0], trange[1], h)
        if cmd in ("simulate", "compare"):
            common = dict(
                latency_range_ms=_pair(s["latency_ms"], "--latency-ms"),
                fidelity=s["fidelity"],
                trials=int(s["trials"]),
                master_seed=int(s["seed"]),
                max_steps=int(s["max_steps"]),
            )
            if trange is not None:
                cfg.sim = SimConfig(n, p, trange, heartbeat_interval_ms=h, **common)
            else:
                cfg.sim = SimConfig.for_timeout_steps(n, p, cfg.model.timeout_steps, h, **common)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def run(config: RunConfig, stdout=None, stderr=None) -> int:
    """Execute a validated config; returns the process exit code."""
    stderr = stderr or sys.stderr
    try:
        config.validate()
        report = HANDLERS[config.command](config)
    except ConfigError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (numerics.SingularMatrixError, NonAbsorbingChainError, AllCensoredError) as exc:
        stderr.write(f"computation failed: {exc}\n")
        return EXIT_COMPUTE
    write_report(config, report, stdout, stderr)
    return report.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        config = config_from_args(ns)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
