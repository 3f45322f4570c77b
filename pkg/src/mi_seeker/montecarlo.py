"""Noise-level sweeps with paired trials and quartile summaries.

Output files (column order is fixed):

``summary.csv``
    level, algorithm, metric, q1, mean, q3, n_valid, n_excluded
``timeseries.csv``
    level, algorithm, metric, time_step, mean, q1, q3
``sweep.json``
    resolved sweep configuration plus one status entry per episode.

Quartiles use linear interpolation between order statistics
(``numpy.percentile(..., method="linear")``). Floats are written with
``repr`` so the files are locale-free and round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import ALGORITHMS, PF_ONLY, PROPOSED, STATUS_OK, EpisodeConfig, reference_noise_cov, simulate

log = logging.getLogger(__name__)

METRICS = ("target", "agent")
SUMMARY_COLUMNS = ("level", "algorithm", "metric", "q1", "mean", "q3", "n_valid", "n_excluded")
TIMESERIES_COLUMNS = ("level", "algorithm", "metric", "time_step", "mean", "q1", "q3")
DEFAULT_LEVELS = (0.0, 0.5, 1.0, 2.0, 4.0, 6.0)


@dataclass
class SweepConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    base_cov: np.ndarray = field(default_factory=reference_noise_cov)
    levels: tuple = DEFAULT_LEVELS
    trials: int = 30
    algorithms: tuple = (PF_ONLY, PROPOSED)

    def __post_init__(self):
        self.base_cov = np.asarray(self.base_cov, dtype=float)
        self.levels = tuple(float(v) for v in self.levels)
        self.algorithms = tuple(self.algorithms)
        if any(v < 0 for v in self.levels):
            raise ValueError("noise multipliers must be nonnegative")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            raise ValueError(f"algorithms must be drawn from {ALGORITHMS}")

    def episode_for(self, level: float, trial: int, algorithm: str) -> EpisodeConfig:
        cov = level * self.base_cov
        assumed = cov if algorithm == PROPOSED else np.zeros((3, 3))
        return self.episode.with_(
            true_noise_cov=cov, assumed_noise_cov=assumed, trial=trial, algorithm=algorithm
        )

    def tasks(self):
        return [(lv, tr, alg) for lv in self.levels for tr in range(self.trials) for alg in self.algorithms]

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "trials": self.trials,
            "algorithms": list(self.algorithms),
            "base_cov": self.base_cov.tolist(),
            "episode": self.episode.to_dict(),
        }


@dataclass(frozen=True)
class TrialRecord:
    level: float
    trial: int
    algorithm: str
    status: str
    halted_at: int | None
    true_target: tuple
    target_errors: tuple  # per step
    agent_errors: tuple  # per step
    noise_checksum: str

    @property
    def valid(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class SummaryRow:
    level: float
    algorithm: str
    metric: str
    q1: float
    mean: float
    q3: float
    n_valid: int = 0
    n_excluded: int = 0


@dataclass(frozen=True)
class TimeSeriesRow:
    level: float
    algorithm: str
    metric: str
    time_step: int
    mean: float
    q1: float
    q3: float


def run_trial(sc: SweepConfig, level: float, trial: int, algorithm: str) -> TrialRecord:
    ep = simulate(sc.episode_for(level, trial, algorithm))
    target = ep.records[0].true_target if ep.records else ()
    return TrialRecord(
        level=level,
        trial=trial,
        algorithm=algorithm,
        status=ep.status,
        halted_at=ep.halted_at,
        true_target=target,
        target_errors=tuple(r.target_error for r in ep.records),
        agent_errors=tuple(r.agent_error for r in ep.records),
        noise_checksum=ep.noise_checksum,
    )


def _run_task(args):
    return run_trial(*args)


def run_sweep(sc: SweepConfig, workers: int = 1) -> list:
    """Run every (level, trial, algorithm) episode; results keep task order."""
    tasks = [(sc, *t) for t in sc.tasks()]
    if workers <= 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    bad = [r for r in results if not r.valid]
    if bad:
        log.warning("%d of %d episodes halted early", len(bad), len(results))
    return results


def target_error(estimate, truth) -> float:
    return float(np.hypot(*(np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float))))


def agent_error(estimates, truths) -> float:
    """Mean planar distance between estimated and true agent positions."""
    est = np.asarray(estimates, dtype=float)[:, :2]
    tru = np.asarray(truths, dtype=float)[:, :2]
    return float(np.mean(np.linalg.norm(est - tru, axis=1)))


def error_metrics(records):
    """Final-step ``(target_error, agent_error)``; ``None`` for a halted trial."""
    if isinstance(records, TrialRecord):
        if not records.valid or not records.target_errors:
            return None
        return records.target_errors[-1], records.agent_errors[-1]
    if not records or records[-1].status != STATUS_OK:
        return None
    last = records[-1]
    return (
        target_error(last.target_estimate, last.true_target),
        agent_error(last.agent_estimates, last.true_agents),
    )


def quartile_summary(errors, level: float, algorithm: str, metric: str = "target", n_excluded: int = 0) -> SummaryRow:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("quartile_summary needs at least one valid trial")
    q1, q3 = np.percentile(errors, [25, 75], method="linear")
    return SummaryRow(level, algorithm, metric, float(q1), float(errors.mean()), float(q3), int(errors.size), n_excluded)


def _group(trials, level, algorithm):
    return [t for t in trials if t.level == level and t.algorithm == algorithm]


def _keys(trials):
    levels = sorted({t.level for t in trials})
    algorithms = [a for a in (PF_ONLY, PROPOSED) if any(t.algorithm == a for t in trials)]
    return levels, algorithms


def summarize(trials) -> list:
    rows = []
    levels, algorithms = _keys(trials)
    for level in levels:
        for alg in algorithms:
            group = _group(trials, level, alg)
            finals = [error_metrics(t) for t in group]
            valid = [f for f in finals if f is not None]
            excluded = len(finals) - len(valid)
            for m, metric in enumerate(METRICS):
                if valid:
                    rows.append(quartile_summary([v[m] for v in valid], level, alg, metric, excluded))
                else:
                    nan = float("nan")
                    rows.append(SummaryRow(level, alg, metric, nan, nan, nan, 0, excluded))
    return rows


def timeseries_summary(trials) -> list:
    """Per-step mean and quartiles over the valid trials of each group."""
    if not trials:
        raise ValueError("timeseries_summary needs at least one trial")
    rows = []
    levels, algorithms = _keys(trials)
    for level in levels:
        for alg in algorithms:
            valid = [t for t in _group(trials, level, alg) if t.valid]
            for metric in METRICS:
                if not valid:
                    continue
                series = np.array([getattr(t, f"{metric}_errors") for t in valid])
                q1, q3 = np.percentile(series, [25, 75], axis=0, method="linear")
                mean = series.mean(axis=0)
                for step in range(series.shape[1]):
                    rows.append(TimeSeriesRow(level, alg, metric, step + 1, float(mean[step]), float(q1[step]), float(q3[step])))
    return rows


def _fmt(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def _write_rows(path: Path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in columns])


def write_outputs(out_dir, sc: SweepConfig, trials) -> dict:
    """Write summary.csv, timeseries.csv and sweep.json; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("summary.csv", "timeseries.csv", "sweep.json")}
    _write_rows(paths["summary.csv"], SUMMARY_COLUMNS, summarize(trials))
    _write_rows(paths["timeseries.csv"], TIMESERIES_COLUMNS, timeseries_summary(trials))
    status = [
        {
            "level": t.level,
            "trial": t.trial,
            "algorithm": t.algorithm,
            "status": t.status,
            "halted_at": t.halted_at,
            "true_target": list(t.true_target),
            "noise_checksum": t.noise_checksum,
        }
        for t in trials
    ]
    doc = {"config": sc.to_dict(), "trials": status, "valid_fraction": valid_fraction(trials)}
    paths["sweep.json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def valid_fraction(trials) -> float:
    return sum(t.valid for t in trials) / len(trials) if trials else 0.0


def read_summary(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            SummaryRow(
                float(r["level"]), r["algorithm"], r["metric"], float(r["q1"]), float(r["mean"]), float(r["q3"]),
                int(r["n_valid"]), int(r["n_excluded"]),
            )
            for r in reader
        ]


def report_table(rows) -> tuple:
    """Pivot summary rows to one line per level: PF-only then proposed,
    target then agent, (q1, mean, q3) each. Returns ``(header, lines)``."""
    header = ["noise_level"]
    for alg in (PF_ONLY, PROPOSED):
        for metric in METRICS:
            header += [f"{alg}_{metric}_{stat}" for stat in ("q1", "mean", "q3")]
    index = {(r.level, r.algorithm, r.metric): r for r in rows}
    lines = []
    for level in sorted({r.level for r in rows}):
        line = [level]
        for alg in (PF_ONLY, PROPOSED):
            for metric in METRICS:
                r = index.get((level, alg, metric))
                line += [r.q1, r.mean, r.q3] if r else [float("nan")] * 3
        lines.append(line)
    return header, lines
