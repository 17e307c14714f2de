"""``flow`` command-line driver: run, compare and sweep experiments."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .baselines import run_retraction
from .config import ConfigError, ExperimentConfig, initial_orbitals, load_config, point_config
from .flow import FlowResult, _fmt, estimate_rate, run_flow, write_trace_csv

log = logging.getLogger("orthoflow")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 1, 2


def solve(cfg: ExperimentConfig) -> FlowResult:
    model = cfg.model.build()
    U0 = initial_orbitals(cfg, model)
    flow = cfg.solver.flow
    if cfg.solver.method == "retraction":
        return run_retraction(model, U0, flow, seed=cfg.seed)
    return run_flow(model, U0, flow, seed=cfg.seed)


def _rate(result: FlowResult):
    try:
        return estimate_rate(result.trace)
    except ValueError:
        return None


def summarize(cfg: ExperimentConfig, result: FlowResult, wall: float) -> dict:
    last = result.trace[-1]
    rate = result.rate if result.rate is not None else _rate(result)
    return {
        "method": cfg.solver.method,
        "status": result.status,
        "iterations": last.iter,
        "final_energy": last.energy,
        "final_grad_norm": last.grad_norm,
        "max_orth_error": max(r.orth_error for r in result.trace),
        "rejections": result.rejections,
        "dt_initial": result.dt_initial,
        "rho_hat": None if rate is None else rate[0],
        "r_squared": None if rate is None else rate[1],
        "seed": cfg.seed,
        "wall_time": wall,
    }


def execute(cfg: ExperimentConfig, out: Path) -> dict:
    """Run one config and write ``trace.csv`` and ``summary.json`` into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = solve(cfg)
    wall = time.perf_counter() - t0
    write_trace_csv(result.trace, out / "trace.csv")
    summary = summarize(cfg, result, wall)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out / "config.toml").write_text(cfg.dumps())
    log.info("%s: %s after %d iterations (E=%.12g)", out, summary["status"], summary["iterations"], summary["final_energy"])
    return summary


def _execute_point(args):
    cfg, out = args
    return execute(cfg, out)


def _output_dir(cfg: ExperimentConfig, override: str | None, config_path: str) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(config_path).with_suffix("").with_name(Path(config_path).stem + "-out")


def _exit_for(statuses) -> int:
    return EXIT_OK if all(s == "converged" for s in statuses) else EXIT_NOT_CONVERGED


def cmd_run(cfg: ExperimentConfig, out: Path) -> int:
    summary = execute(cfg.with_solver(), out)
    return _exit_for([summary["status"]])


def cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    if not cfg.compare:
        raise ConfigError("missing required table `[compare]` with `solvers = [a, b]`")
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for tag, method in zip("ab", cfg.compare):
        sub = out / f"{tag}_{method}"
        summary = execute(cfg.with_solver(method), sub)
        with open(sub / "trace.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        runs.append((method, summary, rows))

    (_, _, ra), (_, _, rb) = runs
    header = [
        "iter", "energy_a", "energy_b", "energy_gap",
        "half_spec_min_a", "half_spec_max_a", "half_spec_min_b", "half_spec_max_b",
    ]  # fmt: skip
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for a, b in zip(ra, rb):
            gap = float(a["energy"]) - float(b["energy"])
            w.writerow([a["iter"], a["energy"], b["energy"], _fmt(gap),
                        a["half_spec_min"], a["half_spec_max"], b["half_spec_min"], b["half_spec_max"]])  # fmt: skip
    summary = {"a": dict(runs[0][1]), "b": dict(runs[1][1])}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return _exit_for([runs[0][1]["status"], runs[1][1]["status"]])


def _workers() -> int:
    env = os.environ.get("FLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FLOW_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    points = cfg.sweep_points()
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(point_config(cfg, p), out / f"point_{i:03d}") for i, p in enumerate(points)]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_execute_point, jobs))
    else:
        summaries = [_execute_point(j) for j in jobs]

    keys = list(cfg.sweep)
    cols = ["status", "iterations", "final_energy", "final_grad_norm", "max_orth_error", "rejections", "rho_hat", "r_squared"]
    with open(out / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", *keys, *cols])
        for i, (p, s) in enumerate(zip(points, summaries)):
            vals = ["" if s[c] is None else (_fmt(s[c]) if isinstance(s[c], float) else s[c]) for c in cols]
            w.writerow([f"point_{i:03d}", *(p[k] for k in keys), *vals])
    return _exit_for(s["status"] for s in summaries)


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flow", description="Orthogonality-preserving gradient flow experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run one solver and write trace.csv and summary.json"),
        ("compare", "run the two solvers named in [compare] side by side"),
        ("sweep", "run every point of the [sweep] parameter grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment config (TOML)")
        p.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        out = _output_dir(cfg, args.output, args.config)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"flow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
