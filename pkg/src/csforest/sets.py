"""Set-valued predictions and calibrated score matrices, with CSV interchange.

Every method in the package emits a PredictionSets so evaluation and the
CLI treat them uniformly.  The CSV form has one row per test sample: the
per-class calibrated scores when available, then the set as a |-delimited
label list, with the literal token OUTLIER for the empty set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError

__all__ = ["OUTLIER_TOKEN", "SET_DELIMITER", "ScoreMatrix", "PredictionSets",
           "write_sets_csv", "read_sets_csv"]

OUTLIER_TOKEN = "OUTLIER"
SET_DELIMITER = "|"


@dataclass(frozen=True)
class ScoreMatrix:
    """Calibrated per-(sample, class) scores on the grid {(1+j)/(n_k+1)}."""

    scores: np.ndarray  # (n_te, K) float
    cal_sizes: np.ndarray  # (K,) per-class calibration counts n_k
    class_names: tuple[str, ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        cal = np.asarray(self.cal_sizes, dtype=np.int64)
        if scores.ndim != 2 or scores.shape[1] != len(self.class_names):
            raise DataError("scores must be (n_te, K) aligned with class_names")
        if cal.shape != (scores.shape[1],):
            raise DataError("one calibration size per class required")
        scores.setflags(write=False)
        cal.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "cal_sizes", cal)

    @property
    def n_test(self) -> int:
        return self.scores.shape[0]

    def prediction_sets(self, alpha: float) -> PredictionSets:
        """Threshold scores at alpha (inclusive) per the calibration rule."""
        if not 0 < alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        return PredictionSets(self.scores >= alpha, self.class_names)


@dataclass(frozen=True)
class PredictionSets:
    """Per-sample subsets of the class alphabet; the empty set flags an outlier."""

    membership: np.ndarray  # (n_te, K) bool
    class_names: tuple[str, ...]

    def __post_init__(self):
        member = np.asarray(self.membership, dtype=bool)
        if member.ndim != 2 or member.shape[1] != len(self.class_names):
            raise DataError("membership must be (n_te, K) aligned with class_names")
        member.setflags(write=False)
        object.__setattr__(self, "membership", member)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_test(self) -> int:
        return self.membership.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def set_sizes(self) -> np.ndarray:
        return self.membership.sum(axis=1)

    def is_empty(self) -> np.ndarray:
        return ~self.membership.any(axis=1)

    def contains(self, class_index: int) -> np.ndarray:
        """Membership column for class index in 1..K."""
        if not 1 <= class_index <= self.n_classes:
            raise DataError(f"class index {class_index} outside 1..{self.n_classes}")
        return self.membership[:, class_index - 1]

    def labels_for_row(self, i: int) -> tuple[str, ...]:
        return tuple(
            name for j, name in enumerate(self.class_names) if self.membership[i, j]
        )


def write_sets_csv(
    path: str | Path,
    sets: PredictionSets,
    scores: ScoreMatrix | None = None,
) -> None:
    """One row per test sample: optional score columns, then the set column."""
    if scores is not None and scores.n_test != sets.n_test:
        raise DataError("scores and sets cover different numbers of samples")
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        header = []
        if scores is not None:
            header += [f"score_{name}" for name in scores.class_names]
        header.append("set")
        writer.writerow(header)
        for i in range(sets.n_test):
            row = []
            if scores is not None:
                row += [repr(float(v)) for v in scores.scores[i]]
            labels = sets.labels_for_row(i)
            row.append(SET_DELIMITER.join(labels) if labels else OUTLIER_TOKEN)
            writer.writerow(row)


def read_sets_csv(path: str | Path, class_names: Sequence[str]) -> PredictionSets:
    """Parse the set column back into a membership matrix."""
    path = Path(path)
    names = tuple(str(c) for c in class_names)
    index = {name: j for j, name in enumerate(names)}
    rows: list[np.ndarray] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "set" not in header:
            raise ParseError(f"{path}: missing 'set' column")
        col = header.index("set")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            member = np.zeros(len(names), dtype=bool)
            token = row[col].strip()
            if token != OUTLIER_TOKEN and token:
                for label in token.split(SET_DELIMITER):
                    if label not in index:
                        raise ParseError(f"{path}:{lineno}: unknown class label {label!r}")
                    member[index[label]] = True
            rows.append(member)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return PredictionSets(np.vstack(rows), names)
