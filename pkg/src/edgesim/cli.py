"""Command-line front end.

    edgesim generate CONFIG [--out DIR]
    edgesim run CONFIG [--event-log PATH] [--exact-cycles]
    edgesim sweep CONFIG --probabilities 0.01,0.05,0.1,0.15 [--cycles N] [--out PATH]
    edgesim plot-data METRICS_DIR KIND OUT

``generate``, ``run`` and ``sweep`` accept repeated ``--set key=value``
overrides. Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 invariant breach.
"""

from __future__ import annotations

import argparse
import copy
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import replace
from typing import List, Optional, Sequence

from .churn import churn_sweep, write_sweep_csv
from .config import ConfigError, RunConfig, load_config
from .datagen import ParseError, SchemaError, export_csv, generate, load_csv
from .engine import Environment, EventLog
from .metrics import PLOT_KINDS, MetricsError, energy_total, export_metrics, load_metrics, plot_data, write_series
from .model import InvariantError, ValidationError
from .scheduling import AgentPool

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INVARIANT = 4


class _InputError(Exception):
    """A workload or metrics file that exists but cannot be used."""


def _workload(cfg: RunConfig, seed: Optional[int] = None):
    if cfg.workload_dir is not None:
        try:
            return load_csv(cfg.workload_dir)
        except (ParseError, SchemaError, ValidationError) as exc:
            raise _InputError(str(exc)) from None
    gen = cfg.generation if seed is None else replace(cfg.generation, seed=seed)
    return generate(gen)


def _environment(cfg: RunConfig, apps, devices, executor=None, event_log=None) -> Environment:
    pool = AgentPool.build(cfg.scheduler, cfg.agents, cfg.engine.seed)
    return Environment(apps, devices, cfg.engine, pool=pool, gen_cfg=cfg.generation,
                       event_log=event_log, executor=executor)


def cmd_generate(cfg: RunConfig, out_dir: Optional[str] = None) -> str:
    """Write the workload CSVs and ``manifest.txt``; returns the manifest path."""
    out_dir = out_dir or cfg.output_dir
    apps, devices = generate(cfg.generation)
    files = export_csv(apps, devices, out_dir)
    lines = [
        f"seed={cfg.generation.seed}",
        f"num_apps={len(apps)}",
        f"num_tasks={sum(a.num_tasks for a in apps)}",
        f"num_devices={len(devices)}",
    ]
    lines += [f"{name}={rows}" for name, (_, rows) in sorted(files.items())]
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def summary_line(env: Environment) -> str:
    spans = [a.makespan for a in env.metrics.apps.values()]
    mean = sum(spans) / len(spans) if spans else math.nan
    return (f"cycles={len(env.metrics.cycles)} apps_finished={len(env.metrics.apps)} "
            f"mean_makespan={mean:.3f} total_energy_wh={energy_total(env.metrics):.6f}")


def cmd_run(cfg: RunConfig, event_log_path: Optional[str] = None, exact_cycles: bool = False) -> Environment:
    apps, devices = _workload(cfg)
    workers = cfg.agents if cfg.agent_workers is None else cfg.agent_workers
    with ExitStack() as stack:
        # Leaving the stack drains the agent pool and closes the log before export.
        executor = stack.enter_context(ThreadPoolExecutor(workers)) if workers > 0 else None
        events = None
        if event_log_path:
            events = EventLog(event_log_path, keep=False)
            stack.callback(events.close)
        env = _environment(cfg, apps, devices, executor, events)
        env.run(early_stop=not exact_cycles)
    env.executor = None
    export_metrics(env.metrics, cfg.output_dir, wall_time=cfg.record_wall_time)
    return env


def parse_probabilities(text: str) -> List[float]:
    try:
        probs = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad probability list {text!r}") from None
    if not probs:
        raise ConfigError("no probabilities given")
    for p in probs:
        if not 0.0 <= p <= 1.0 or math.isnan(p):
            raise ConfigError(f"probability {p} outside [0, 1]")
    return probs


def cmd_sweep(cfg: RunConfig, probabilities: Sequence[float], cycles: Optional[int] = None,
              out_path: Optional[str] = None) -> str:
    cycles = cycles or cfg.engine.total_cycles
    seeds = range(cfg.seed, cfg.seed + cfg.sweep_seeds)
    cache = {}

    def factory(p, seed):
        if seed not in cache:
            cache[seed] = _workload(cfg, seed)
        apps, devices = cache[seed]
        churn = replace(cfg.engine.churn, event_probability=p, enabled=True)
        run_cfg = copy.copy(cfg)
        run_cfg.engine = replace(cfg.engine, seed=seed, churn=churn)
        return _environment(run_cfg, apps, devices)

    rows = churn_sweep(factory, probabilities, cycles, seeds)
    out_path = out_path or os.path.join(cfg.output_dir, "churn_sweep.csv")
    parent = os.path.dirname(out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_sweep_csv(rows, out_path)
    return out_path


def cmd_plot_data(metrics_dir: str, kind: str, out_path: str) -> int:
    """Returns the number of series rows written."""
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; valid kinds: {', '.join(PLOT_KINDS)}")
    try:
        store = load_metrics(metrics_dir)
    except MetricsError as exc:
        raise _InputError(str(exc)) from None
    header, rows = plot_data(store, kind)
    write_series(header, rows, out_path)
    return len(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgesim", description="Edge DAG scheduling simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key, e.g. generation.num_apps=500")
        return p

    g = with_config(sub.add_parser("generate", help="generate a workload and fleet as CSV"))
    g.add_argument("--out", help="output directory (default: output_dir from the config)")

    r = with_config(sub.add_parser("run", help="run a simulation and export metrics"))
    r.add_argument("--event-log", help="write a cycle,event_kind,subject_id,detail log here")
    r.add_argument("--exact-cycles", action="store_true",
                   help="always run total_cycles, even after the workload is done")

    s = with_config(sub.add_parser("sweep", help="average churn counts over probabilities"))
    s.add_argument("--probabilities", required=True, help="comma separated, e.g. 0.01,0.05,0.1")
    s.add_argument("--cycles", type=int, help="cycles per run (default: engine.total_cycles)")
    s.add_argument("--out", help="sweep CSV path (default: <output_dir>/churn_sweep.csv)")

    p = sub.add_parser("plot-data", help="write a plot-ready series from exported metrics")
    p.add_argument("metrics_dir")
    p.add_argument("kind", help=", ".join(PLOT_KINDS))
    p.add_argument("out")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot-data":
            n = cmd_plot_data(args.metrics_dir, args.kind, args.out)
            print(f"wrote {n} rows to {args.out}")
            return EXIT_OK
        cfg = load_config(args.config, args.overrides)
        if args.command == "generate":
            print(cmd_generate(cfg, args.out))
        elif args.command == "run":
            print(summary_line(cmd_run(cfg, args.event_log, args.exact_cycles)))
        elif args.command == "sweep":
            probs = parse_probabilities(args.probabilities)
            if args.cycles is not None and args.cycles < 1:
                raise ConfigError("--cycles must be at least 1")
            print(cmd_sweep(cfg, probs, args.cycles, args.out))
        return EXIT_OK
    except ConfigError as exc:
        print(f"edgesim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"edgesim: invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, _InputError) as exc:
        print(f"edgesim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
