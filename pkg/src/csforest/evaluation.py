"""Per-class coverage and error accounting for set-valued predictions.

For an inlier class the four outcome categories (exact singleton,
multi-label with the true class, empty set, non-empty miss) partition the
class mass; coverage is singleton + multi.  Ground-truth outliers have no
coverage; their empty-set rate is the rejection rate.  Type I counts
inlier rows whose set misses the truth; type II counts any row whose set
contains a wrong label (for outliers, any non-empty set).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import OUTLIER_LABEL
from .errors import DataError
from .sets import PredictionSets

__all__ = [
    "ClassStats",
    "EvalReport",
    "type_errors",
    "aggregate_runs",
    "flatten_report",
    "write_report_json",
    "read_report_json",
    "write_report_long_csv",
]

OUTLIER_KEY = "R"


@dataclass(frozen=True)
class ClassStats:
    """Outcome rates for one ground-truth class; None marks undefined rates."""

    n: int
    coverage: float | None
    singleton_rate: float | None
    multi_rate: float | None
    empty_rate: float | None
    miss_rate: float | None
    type2_rate: float | None


@dataclass(frozen=True)
class EvalReport:
    """Per-class stats plus aggregate type I / type II errors."""

    class_names: tuple[str, ...]
    per_class: dict[str, ClassStats]  # inlier classes, then OUTLIER_KEY if present
    type1: float
    type2: float
    n_inliers: int
    n_total: int


def _empty_stats(n: int = 0) -> ClassStats:
    return ClassStats(n, None, None, None, None, None, None)


def type_errors(sets: PredictionSets, truth: Sequence[int]) -> EvalReport:
    """Score prediction sets against ground-truth labels (outlier sentinel allowed)."""
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != (sets.n_test,):
        raise DataError("truth labels must align with prediction rows")
    member = sets.membership
    sizes = member.sum(axis=1)
    per_class: dict[str, ClassStats] = {}
    type1_count = 0
    type2_count = 0
    n_inliers = 0
    for k in range(1, sets.n_classes + 1):
        mask = truth == k
        n = int(mask.sum())
        if n == 0:
            per_class[sets.class_names[k - 1]] = _empty_stats()
            continue
        n_inliers += n
        has_true = member[mask, k - 1]
        size = sizes[mask]
        singleton = int((has_true & (size == 1)).sum())
        multi = int((has_true & (size > 1)).sum())
        empty = int((~has_true & (size == 0)).sum())
        miss = int((~has_true & (size > 0)).sum())
        wrong = int((size - has_true.astype(int) > 0).sum())
        type1_count += empty + miss
        type2_count += wrong
        per_class[sets.class_names[k - 1]] = ClassStats(
            n,
            (singleton + multi) / n,
            singleton / n,
            multi / n,
            empty / n,
            miss / n,
            wrong / n,
        )
    out_mask = truth == OUTLIER_LABEL
    n_out = int(out_mask.sum())
    if n_out > 0:
        rejected = int((sizes[out_mask] == 0).sum())
        type2_count += n_out - rejected
        per_class[OUTLIER_KEY] = ClassStats(
            n_out, None, None, None, rejected / n_out, None, (n_out - rejected) / n_out
        )
    n_total = n_inliers + n_out
    if n_total != truth.size:
        bad = set(np.unique(truth)) - set(range(1, sets.n_classes + 1)) - {OUTLIER_LABEL}
        raise DataError(f"truth contains labels outside the alphabet: {sorted(bad)}")
    return EvalReport(
        sets.class_names,
        per_class,
        type1_count / n_inliers if n_inliers else 0.0,
        type2_count / n_total,
        n_inliers,
        n_total,
    )


_STAT_FIELDS = ("coverage", "singleton_rate", "multi_rate", "empty_rate", "miss_rate", "type2_rate")


def flatten_report(report: EvalReport) -> dict[str, float | None]:
    """Stable-ordered flat key/value view (for tables and aggregation)."""
    flat: dict[str, float | None] = {
        "type1": report.type1,
        "type2": report.type2,
        "n_inliers": float(report.n_inliers),
        "n_total": float(report.n_total),
    }
    for name, stats in report.per_class.items():
        flat[f"{name}.n"] = float(stats.n)
        for field in _STAT_FIELDS:
            flat[f"{name}.{field}"] = getattr(stats, field)
    return flat


def aggregate_runs(reports: Sequence[EvalReport]) -> dict[str, tuple[float, float]]:
    """Per-field mean and sample standard deviation across repeated runs."""
    if not reports:
        raise DataError("need at least one report")
    flats = [flatten_report(r) for r in reports]
    keys = list(flats[0])
    for f in flats[1:]:
        if list(f) != keys:
            raise DataError("reports have mismatched structures")
    out: dict[str, tuple[float, float]] = {}
    for key in keys:
        vals = [f[key] for f in flats]
        defined = [v for v in vals if v is not None]
        if len(defined) != len(vals) and defined:
            raise DataError(f"field {key} defined in only some reports")
        if not defined:
            continue
        arr = np.asarray(defined)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[key] = (float(arr.mean()), sd)
    return out


def write_report_json(report: EvalReport, path: str | Path, extra: dict | None = None) -> None:
    """Lossless JSON export; `extra` adds metadata fields (method, rep, ...)."""
    doc = {
        "class_names": list(report.class_names),
        "per_class": {name: asdict(stats) for name, stats in report.per_class.items()},
        "type1": report.type1,
        "type2": report.type2,
        "n_inliers": report.n_inliers,
        "n_total": report.n_total,
    }
    if extra:
        doc = {**extra, "report": doc}
    with open(Path(path), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report_json(path: str | Path) -> tuple[EvalReport, dict]:
    """Parse a report written by write_report_json; returns (report, metadata)."""
    with open(Path(path)) as fh:
        doc = json.load(fh)
    meta = {}
    if "report" in doc:
        meta = {k: v for k, v in doc.items() if k != "report"}
        doc = doc["report"]
    per_class = {name: ClassStats(**stats) for name, stats in doc["per_class"].items()}
    report = EvalReport(
        tuple(doc["class_names"]),
        per_class,
        doc["type1"],
        doc["type2"],
        doc["n_inliers"],
        doc["n_total"],
    )
    return report, meta


def write_report_long_csv(report: EvalReport, path: str | Path) -> None:
    """Long-format (class, category, rate) rows for external plotting."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "category", "rate"])
        for name, stats in report.per_class.items():
            writer.writerow([name, "n", repr(float(stats.n))])
            for field in _STAT_FIELDS:
                value = getattr(stats, field)
                if value is not None:
                    writer.writerow([name, field, repr(value)])
        writer.writerow(["_all", "type1", repr(report.type1)])
        writer.writerow(["_all", "type2", repr(report.type2)])
