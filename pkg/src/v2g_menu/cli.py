"""Command-line entry point: run scenarios, sweeps and the property suites."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, dump_config, load_config
from .simulator import (
    METRIC_NAMES,
    ReplicateAborted,
    SweepResult,
    replicate_seeds,
    run_day,
    sweep_points,
)

METRICS_HEADER = ("point", "replicate", "seed", *METRIC_NAMES)
TRACES_HEADER = ("point", "replicate", "slot", "variable", "value")
STRATEGIES = ("cost", "worst", "clairvoyant", "beta", "zeta")


def _fmt(v: float) -> str:
    return repr(float(v))


def parse_range(text: str) -> list[float]:
    """``a:b:step`` inclusive of ``b`` (up to rounding)."""
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError("need step > 0 and b >= a")
    n = int(math.floor((b - a) / step + 1e-9))
    return [round(a + i * step, 12) for i in range(n + 1)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="v2g-menu", description="Menu-based V2G charging station simulator.")
    p.add_argument("--config", type=Path, help="JSON scenario document (defaults apply to omitted fields)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--no-v2g", action="store_true", help="offer BU = 0 contracts only")
    p.add_argument("--sweep-beta", type=parse_range, metavar="A:B:STEP")
    p.add_argument("--bmax", type=float, nargs="+", help="storage capacity; several values sweep it")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for replicates")
    p.add_argument("--verify", action="store_true", help="run the property suites instead of simulating")
    p.add_argument("--verify-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    return p


def apply_overrides(config: SimConfig, args: argparse.Namespace) -> SimConfig:
    changes = {}
    if args.strategy is not None:
        changes["strategy.kind"] = args.strategy
    if args.beta is not None:
        changes["strategy.beta"] = args.beta
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.replicates is not None:
        changes["replicates"] = args.replicates
    if args.no_v2g:
        changes["v2g_enabled"] = False
    if args.sweep_beta is not None:
        changes["sweep.beta_values"] = args.sweep_beta
    if args.bmax is not None:
        if len(args.bmax) == 1:
            changes["station.storage_capacity"] = args.bmax[0]
        else:
            changes["sweep.bmax_values"] = args.bmax
    return config.replace(**changes) if changes else config


def _run_one(job):
    cfg, seed = job
    return run_day(cfg, seed)


def run_sweep(config: SimConfig, jobs: int = 1) -> SweepResult:
    points = sweep_points(config)
    seeds = replicate_seeds(config.seed, config.replicates)
    work = [(p.config, s) for p in points for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            flat = list(pool.map(_run_one, work))
    else:
        flat = [_run_one(w) for w in work]
    n = len(seeds)
    return SweepResult(points, seeds, [flat[i * n : (i + 1) * n] for i in range(len(points))])


def write_outputs(config: SimConfig, result: SweepResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for p, row in zip(result.points, result.runs):
            for i, (seed, m) in enumerate(zip(result.seeds, row)):
                s = m.scalars()
                w.writerow([p.label, i, seed, *(_fmt(s[k]) for k in METRIC_NAMES)])
    with open(out / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACES_HEADER)
        for p, row in zip(result.points, result.runs):
            for i, m in enumerate(row):
                for name, arr in m.traces().items():
                    for t, v in enumerate(np.asarray(arr, float)):
                        w.writerow([p.label, i, t, name, _fmt(float(v))])
    summary = {
        "strategy": config.strategy.kind,
        "replicates": len(result.seeds),
        "points": result.summary(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = {
        "package": "v2g_menu",
        "version": _version(),
        "seed": config.seed,
        "replicate_seeds": result.seeds,
        "config_sha256": config.digest(),
        "config": json.loads(dump_config(config)),
        "dependencies": {d: _version(d) for d in ("numpy", "scipy", "highspy", "pydantic")},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _version(dist: str = "artifact") -> str:
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verify:
        from .verify import run_all

        results = run_all(args.verify_scale)
        return 0 if all(r.passed for r in results) else 1
    try:
        config = apply_overrides(load_config(args.config), args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_sweep(config, args.jobs)
    except ReplicateAborted as exc:
        print(f"error: replicate aborted: {exc}", file=sys.stderr)
        return 3
    try:
        write_outputs(config, result, args.out)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return 4
    for entry in result.summary():
        print(
            f"{entry['point']}: admitted {entry['admitted_fraction']['mean']:.3f}, "
            f"profit {entry['total_station_profit']['mean']:.2f}, "
            f"surplus {entry['total_user_surplus']['mean']:.2f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
