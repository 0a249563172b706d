"""Accuracy matrix bookkeeping, ACC/BWT and report files.

``R[i, j]`` is the test accuracy on task ``j`` after training through task
``i`` (0-based here, fractions in [0, 1]); entries that were never measured
are NaN.

Report files
------------
``<name>.json``
    ``method``, ``seed``, ``num_tasks``, ``R`` (nested lists, ``null`` for
    unmeasured cells), ``acc``, ``bwt`` (``null`` when undefined), ``curves``
    (per task, mean training loss over consecutive windows of iterations),
    ``decompositions`` (birth/death decompositions performed), ``config``
    (the resolved trainer configuration) and, only if requested,
    ``wall_clock`` seconds.
``<name>.csv``
    Header ``after_task,task_1,...,task_T`` then one row per trained task;
    unmeasured cells are empty.
Aggregate CSV
    ``group,n,acc_mean,acc_std,bwt_mean,bwt_std``; standard deviations use
    the n-1 denominator, ``nan`` when undefined.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import IncompleteMatrix, UndefinedForSingleTask


@dataclass
class ExperimentReport:
    method: str
    R: np.ndarray
    acc: float
    bwt: float | None
    curves: list[list[float]] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    wall_clock: float = 0.0
    decompositions: int = 0

    @property
    def num_tasks(self) -> int:
        return int(self.R.shape[0])


def _as_matrix(R) -> np.ndarray:
    R = np.array(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] == 0:
        raise IncompleteMatrix(f"R must be a non-empty square matrix, got shape {R.shape}")
    return R


def compute_acc(R) -> float:
    """Mean of the final row."""
    R = _as_matrix(R)
    last = R[-1]
    if np.any(np.isnan(last)):
        raise IncompleteMatrix("final row of R has unmeasured entries")
    return float(last.mean())


def compute_bwt(R) -> float:
    """Mean over earlier tasks of (final accuracy - accuracy right after training)."""
    R = _as_matrix(R)
    T = R.shape[0]
    if T == 1:
        raise UndefinedForSingleTask("backward transfer needs at least two tasks")
    last, diag = R[-1, :-1], np.diag(R)[:-1]
    if np.any(np.isnan(last)) or np.any(np.isnan(diag)):
        raise IncompleteMatrix("R needs its diagonal and final row")
    return float((last - diag).sum() / (T - 1))


def _nan_to_none(R: np.ndarray) -> list[list[float | None]]:
    return [[None if np.isnan(v) else float(v) for v in row] for row in R]


def report_to_dict(report: ExperimentReport, include_timing: bool = False) -> dict:
    out = {
        "method": report.method,
        "seed": report.seed,
        "num_tasks": report.num_tasks,
        "R": _nan_to_none(report.R),
        "acc": report.acc,
        "bwt": report.bwt,
        "curves": report.curves,
        "decompositions": report.decompositions,
        "config": report.config,
    }
    if include_timing:
        out["wall_clock"] = report.wall_clock
    return out


def report_from_dict(d: Mapping) -> ExperimentReport:
    R = np.array([[np.nan if v is None else v for v in row] for row in d["R"]], dtype=np.float64)
    return ExperimentReport(
        method=d["method"], R=R, acc=d["acc"], bwt=d["bwt"], curves=d.get("curves", []),
        config=d.get("config", {}), seed=d.get("seed", 0), wall_clock=d.get("wall_clock", 0.0),
        decompositions=d.get("decompositions", 0),
    )


def write_report(report: ExperimentReport, path, format: str = "json",
                 include_timing: bool = False) -> None:
    path = Path(path)
    if format == "json":
        text = json.dumps(report_to_dict(report, include_timing), indent=2, sort_keys=True)
        path.write_text(text + "\n")
    elif format == "csv":
        T = report.num_tasks
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["after_task"] + [f"task_{j + 1}" for j in range(T)])
            for i in range(T):
                w.writerow([i + 1] + ["" if np.isnan(v) else repr(float(v)) for v in report.R[i]])
    else:
        raise ValueError(f"unknown report format {format!r}")


def read_report(path) -> ExperimentReport:
    return report_from_dict(json.loads(Path(path).read_text()))


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[np.nan if v == "" else float(v) for v in row[1:]] for row in rows[1:]])


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and n-1 standard deviation (nan for a single value)."""
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    std = float(v.std(ddof=1)) if v.size > 1 else float("nan")
    return float(v.mean()), std


def aggregate_reports(groups: Mapping[str, Iterable[ExperimentReport]]) -> list[dict]:
    rows = []
    for name, reports in groups.items():
        reports = list(reports)
        acc_mean, acc_std = mean_std([r.acc for r in reports])
        bwt_mean, bwt_std = mean_std([r.bwt for r in reports])
        rows.append({"group": name, "n": len(reports), "acc_mean": acc_mean, "acc_std": acc_std,
                     "bwt_mean": bwt_mean, "bwt_std": bwt_std})
    return rows


AGGREGATE_FIELDS = ["group", "n", "acc_mean", "acc_std", "bwt_mean", "bwt_std"]


def write_aggregate(rows: Sequence[Mapping], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, AGGREGATE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_aggregate(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["n"] = int(row["n"])
        for k in AGGREGATE_FIELDS[2:]:
            row[k] = float(row[k])
    return rows


def format_table(rows: Sequence[Mapping]) -> str:
    """Percent-formatted ``mean +- std`` table for terminals."""
    lines = [f"{'group':<24} {'ACC (%)':>18} {'BWT (%)':>18}"]
    for r in rows:
        def cell(m, s):
            if np.isnan(m):
                return "--"
            return f"{100 * m:.2f}" if np.isnan(s) else f"{100 * m:.2f} +- {100 * s:.2f}"
        lines.append(f"{r['group']:<24} {cell(r['acc_mean'], r['acc_std']):>18} "
                     f"{cell(r['bwt_mean'], r['bwt_std']):>18}")
    return "\n".join(lines)
