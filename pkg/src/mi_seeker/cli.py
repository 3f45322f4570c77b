"""Command-line entry point: ``mi-seeker {run,sweep,report,check}``.

Exit codes: 0 success, 1 configuration or input error, 2 filter divergence,
3 sweep with fewer than 90% valid trials, 4 self-check failure.

``run`` writes ``steps.csv`` (one row per step), ``episode.json`` (resolved
configuration) and ``manifest.json``. The step columns are::

    time_step, status, then per agent i: action_i, true_x_i, true_y_i,
    true_psi_i, z_i; true_target_x, true_target_y, est_target_x,
    est_target_y; per agent i: est_x_i, est_y_i, est_psi_i; then
    target_error_m, agent_error_m, n_eff, resampled, objective
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from importlib import metadata
from pathlib import Path

from . import checks, config, montecarlo
from .errors import ConfigError
from .world import ALGORITHMS, STATUS_OK, simulate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_PARTIAL = 3
EXIT_CHECK = 4

MIN_VALID_FRACTION = 0.9
OUT_ENV = "MI_SEEKER_OUT"

log = logging.getLogger("mi_seeker")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.1.0"


def step_columns(n_agents: int) -> list:
    cols = ["time_step", "status"]
    for i in range(n_agents):
        cols += [f"action_{i}", f"true_x_{i}", f"true_y_{i}", f"true_psi_{i}", f"z_{i}"]
    cols += ["true_target_x", "true_target_y", "est_target_x", "est_target_y"]
    for i in range(n_agents):
        cols += [f"est_x_{i}", f"est_y_{i}", f"est_psi_{i}"]
    return cols + ["target_error_m", "agent_error_m", "n_eff", "resampled", "objective"]


def step_row(rec) -> list:
    row = [rec.time_step, rec.status]
    for i, pose in enumerate(rec.true_agents):
        row += [rec.action[i], *pose, rec.measurements[i]]
    row += [*rec.true_target, *rec.target_estimate]
    for pose in rec.agent_estimates:
        row += list(pose)
    row += [rec.target_error, rec.agent_error, rec.n_eff, int(rec.resampled), rec.objective]
    return [repr(v) if isinstance(v, float) else str(v) for v in row]


def write_steps_csv(path, records, n_agents: int):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(step_columns(n_agents))
        for rec in records:
            writer.writerow(step_row(rec))


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "mi_seeker_runs")) / command


def _write_manifest(out: Path, command: str, resolved: dict, outputs, started: float):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": resolved,
        "version": _version(),
        "seed": resolved.get("seed"),
        "outputs": sorted(str(p) for p in outputs),
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _overrides(args) -> dict:
    ov = {"seed": args.seed}
    if getattr(args, "algorithm", None):
        ov["algorithm"] = args.algorithm
    if getattr(args, "noise_mult", None) is not None:
        ov["noise.mult"] = args.noise_mult
    if getattr(args, "trials", None) is not None:
        ov["sweep.trials"] = args.trials
    return ov


def cmd_run(args) -> int:
    started = time.perf_counter()
    try:
        resolved = config.load(args.config, _overrides(args))
        cfg = config.episode_config(resolved)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, "run")
    out.mkdir(parents=True, exist_ok=True)
    episode = simulate(cfg)
    steps = out / "steps.csv"
    write_steps_csv(steps, episode.records, cfg.n_agents)
    sidecar = out / "episode.json"
    snapshot = cfg.to_dict()
    snapshot["sensor"] = vars(cfg.sensor)
    sidecar.write_text(
        json.dumps(
            {"config": snapshot, "status": episode.status, "halted_at": episode.halted_at,
             "noise_checksum": episode.noise_checksum, "psd_repairs": episode.psd_repairs},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    resolved["resolved_episode"] = snapshot
    _write_manifest(out, "run", resolved, [steps, sidecar], started)
    if episode.records:
        last = episode.records[-1]
        print(f"step {last.time_step}: target error {last.target_error:.4f} m, agent error {last.agent_error:.4f} m")
    if episode.status != STATUS_OK:
        print(f"filter diverged: {episode.status} at step {episode.halted_at}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    try:
        resolved = config.load(args.config, _overrides(args))
        sc = config.sweep_config(resolved)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, "sweep")
    workers = args.workers or os.cpu_count() or 1
    trials = montecarlo.run_sweep(sc, workers=workers)
    paths = montecarlo.write_outputs(out, sc, trials)
    _write_manifest(out, "sweep", resolved, paths.values(), started)
    frac = montecarlo.valid_fraction(trials)
    print(f"{len(trials)} episodes, {frac:.1%} valid; outputs in {out}")
    if frac < MIN_VALID_FRACTION:
        print(f"error: only {frac:.1%} of trials valid", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def format_table(header, lines) -> str:
    widths = [max(len(h), 9) for h in header]
    out = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    for line in lines:
        out.append("  ".join(f"{v:>{w}.4f}" for v, w in zip(line, widths)))
    return "\n".join(out)


def cmd_report(args) -> int:
    sweep_dir = Path(args.sweep_dir)
    summary = sweep_dir / "summary.csv"
    if not summary.is_file():
        print(f"error: {summary}: no summary.csv (run `sweep` first)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = montecarlo.read_summary(summary)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not rows:
        print(f"error: {summary}: no rows", file=sys.stderr)
        return EXIT_CONFIG
    header, lines = montecarlo.report_table(rows)
    print(format_table(header, lines))
    with open(sweep_dir / "table1.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for line in lines:
            writer.writerow([repr(float(v)) for v in line])
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        results = checks.run_suites(args.suite)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    failed = []
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.tolerance}; {r.margin}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mi-seeker", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="64-bit base seed")
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV}/<command>)")
        p.add_argument("--algorithm", choices=ALGORITHMS)
        p.add_argument("--noise-mult", type=float, help="motion-noise multiple of the reference covariance")

    p_run = sub.add_parser("run", help="run a single episode")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the Monte Carlo noise sweep")
    common(p_sweep)
    p_sweep.add_argument("--trials", type=int)
    p_sweep.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="print and write the summary table of a sweep")
    p_report.add_argument("sweep_dir", type=Path)
    p_report.set_defaults(func=cmd_report)

    p_check = sub.add_parser("check", help="run numerical self-checks")
    p_check.add_argument("--suite", action="append", choices=sorted(checks.SUITES))
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
