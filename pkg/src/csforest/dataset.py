"""Data model, synthetic Gaussian generators, and CSV ingestion.

Labels are contiguous integers 1..K assigned by first appearance.  Ground
truth for novel/outlier test rows uses the reserved sentinel
``OUTLIER_LABEL``; it is only ever consumed by the evaluation module and
never shown to a classifier.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .rng import spawn_rng

__all__ = [
    "OUTLIER_LABEL",
    "Dataset",
    "GaussianClassSpec",
    "ShiftScenario",
    "generate_example1",
    "example1_specs",
    "sample_shift_scenario",
    "generate_multiclass",
    "coordinate_class_specs",
    "multiclass_specs",
    "load_csv",
    "write_csv",
    "subsample_per_class",
    "relabel_outliers",
]

# Ground-truth marker for rows drawn from no observed training class.
OUTLIER_LABEL = -1


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional per-row class labels.

    features : (n, p) float array, n >= 1, p >= 1.
    labels   : (n,) int array with values in {1..K} plus OUTLIER_LABEL for
               ground-truth outliers, or None for unlabeled data.
    class_names : K ordered identifiers; position k-1 names class k.
    """

    features: np.ndarray
    labels: np.ndarray | None
    class_names: tuple[str, ...]

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        object.__setattr__(self, "features", _readonly(feats))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise DataError(
                    f"labels length {labels.shape} does not match {feats.shape[0]} rows"
                )
            k = len(self.class_names)
            valid = ((labels >= 1) & (labels <= k)) | (labels == OUTLIER_LABEL)
            if not valid.all():
                bad = labels[~valid][0]
                raise DataError(f"label {bad} outside 1..{k} (or outlier sentinel)")
            object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise DataError("operation requires a labeled dataset")
        return self.labels

    def rows_of_class(self, k: int) -> np.ndarray:
        """Feature rows whose label equals k."""
        return self.features[self.require_labels() == k]

    def class_counts(self) -> dict[int, int]:
        labels = self.require_labels()
        return {int(v): int(c) for v, c in zip(*np.unique(labels, return_counts=True))}


@dataclass(frozen=True)
class GaussianClassSpec:
    """Axis-aligned Gaussian component: per-dimension means and sds."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=np.float64))
        if mean.shape != sd.shape or mean.ndim != 1:
            raise ConfigError("mean and sd must be 1-D vectors of equal length")
        if not (sd > 0).all():
            raise ConfigError("all standard deviations must be > 0")
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "sd", _readonly(sd))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal((n, self.dim))

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log pdf at each row of x."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = (x - self.mean) / self.sd
        return -0.5 * (z * z).sum(axis=1) - np.log(self.sd).sum() - 0.5 * self.dim * math.log(2 * math.pi)


@dataclass(frozen=True)
class ShiftScenario:
    """Mixture sampler for a test cohort under generalized label shift.

    Inlier class k is drawn with probability weights[k-1] from
    inlier_specs[k-1]; with probability outlier_weight a row comes from
    outlier_spec and is labeled OUTLIER_LABEL.
    """

    inlier_specs: tuple[GaussianClassSpec, ...]
    weights: tuple[float, ...]
    outlier_spec: GaussianClassSpec | None
    outlier_weight: float
    n: int
    seed: int

    def __post_init__(self):
        if len(self.inlier_specs) != len(self.weights):
            raise ConfigError("one weight per inlier spec required")
        if any(w < 0 for w in self.weights) or self.outlier_weight < 0:
            raise ConfigError("mixture weights must be >= 0")
        total = sum(self.weights) + self.outlier_weight
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights must sum to 1, got {total!r}")
        if self.outlier_weight > 0 and self.outlier_spec is None:
            raise ConfigError("outlier_weight > 0 requires an outlier_spec")
        if self.n < 1:
            raise ConfigError("sample count must be >= 1")
        dims = {s.dim for s in self.inlier_specs}
        if self.outlier_spec is not None:
            dims.add(self.outlier_spec.dim)
        if len(dims) != 1:
            raise ConfigError("all component specs must share one dimension")


def sample_shift_scenario(scenario: ShiftScenario) -> Dataset:
    """Draw n iid rows from the scenario's mixture; labels record the component."""
    rng = spawn_rng(scenario.seed, "shift-scenario")
    k = len(scenario.inlier_specs)
    probs = np.array(list(scenario.weights) + [scenario.outlier_weight])
    comps = rng.choice(k + 1, size=scenario.n, p=probs)
    specs = list(scenario.inlier_specs) + ([scenario.outlier_spec] if scenario.outlier_spec is not None else [])
    p = scenario.inlier_specs[0].dim if scenario.inlier_specs else scenario.outlier_spec.dim
    noise = rng.standard_normal((scenario.n, p))
    feats = np.empty((scenario.n, p))
    labels = np.empty(scenario.n, dtype=np.int64)
    for c in range(k + 1):
        mask = comps == c
        if not mask.any():
            continue
        if c == k:
            spec = scenario.outlier_spec
            labels[mask] = OUTLIER_LABEL
        else:
            spec = scenario.inlier_specs[c]
            labels[mask] = c + 1
        feats[mask] = spec.mean + spec.sd * noise[mask]
    names = tuple(str(i + 1) for i in range(k))
    return Dataset(feats, labels, names)


def example1_specs(p: int = 10) -> dict[str, GaussianClassSpec]:
    """Component densities of the two-inlier + one-outlier Gaussian example.

    Class 1: X1,X2 ~ N(0,1); class 2: X1 ~ N(3,0.5), X2 ~ N(0,1);
    class R: X1 ~ N(0,1), X2 ~ N(3,1).  Dimensions 3..p are N(0,1) noise.
    """
    if p < 2:
        raise ConfigError("example needs p >= 2")
    mean1 = np.zeros(p)
    mean2 = np.zeros(p)
    mean2[0] = 3.0
    sd2 = np.ones(p)
    sd2[0] = 0.5
    mean_r = np.zeros(p)
    mean_r[1] = 3.0
    return {
        "1": GaussianClassSpec(mean1, np.ones(p)),
        "2": GaussianClassSpec(mean2, sd2),
        "R": GaussianClassSpec(mean_r, np.ones(p)),
    }


def generate_example1(
    n_train_per_class: int, n_test_per_class: int, seed: int
) -> tuple[Dataset, Dataset]:
    """Two observed classes for training; test cohort adds the novel class R."""
    if n_train_per_class < 1 or n_test_per_class < 1:
        raise ConfigError("per-class counts must be >= 1")
    specs = example1_specs()
    rng = spawn_rng(seed, "example1")
    tr1 = specs["1"].sample(n_train_per_class, rng)
    tr2 = specs["2"].sample(n_train_per_class, rng)
    te1 = specs["1"].sample(n_test_per_class, rng)
    te2 = specs["2"].sample(n_test_per_class, rng)
    ter = specs["R"].sample(n_test_per_class, rng)
    train = Dataset(
        np.vstack([tr1, tr2]),
        np.repeat([1, 2], n_train_per_class),
        ("1", "2"),
    )
    test = Dataset(
        np.vstack([te1, te2, ter]),
        np.repeat([1, 2, OUTLIER_LABEL], n_test_per_class),
        ("1", "2"),
    )
    return train, test


def coordinate_class_specs(n_classes: int, p: int, scale: float) -> list[GaussianClassSpec]:
    """Unit-variance Gaussians with class j centered at scale * e_j."""
    if n_classes > p:
        raise ConfigError(f"need p >= n_classes, got p={p} < {n_classes}")
    specs = []
    for j in range(n_classes):
        mean = np.zeros(p)
        mean[j] = scale
        specs.append(GaussianClassSpec(mean, np.ones(p)))
    return specs


def multiclass_specs(
    n_inlier: int,
    n_outlier: int,
    p: int,
    scale: float,
    block: int = 5,
    signal_sd: float = 0.5,
    outlier_scale: float | None = None,
    outlier_block: int = 2,
) -> list[GaussianClassSpec]:
    """Gaussian classes with a tight signature coordinate block each,
    mirroring the two-class example's N(3, 0.5) signal structure.

    Inlier class j shifts coordinates [j*block, (j+1)*block) by scale with
    sd signal_sd.  Novel component r mimics inlier r on the inlier
    coordinates but adds an outlier_scale shift on outlier_block unused
    coordinates; those are pure noise in training, so training-only
    classifiers confuse the component with its inlier twin while the test
    cohort reveals the extra directions.
    """
    if n_inlier * block + n_outlier * outlier_block > p:
        raise ConfigError(
            f"need p >= {n_inlier * block + n_outlier * outlier_block}, got p={p}"
        )
    if n_outlier > n_inlier:
        raise ConfigError("at most one novel component per inlier class")
    if outlier_scale is None:
        outlier_scale = 2.0 * scale
    specs = []
    for j in range(n_inlier):
        mean = np.zeros(p)
        sd = np.ones(p)
        lo = j * block
        mean[lo : lo + block] = scale
        # the last class is diffuse (like a high-variance digit class): its
        # density covers the others, which defeats density thresholding but
        # not conditional tree splits
        sd[lo : lo + block] = signal_sd if j < n_inlier - 1 else 6.0 * signal_sd
        specs.append(GaussianClassSpec(mean, sd))
    for r in range(n_outlier):
        mean = specs[r].mean.copy()
        sd = specs[r].sd.copy()
        lo = n_inlier * block + r * outlier_block
        mean[lo : lo + outlier_block] = outlier_scale
        specs.append(GaussianClassSpec(mean, sd))
    return specs


def generate_multiclass(
    n_inlier: int,
    n_outlier: int,
    p: int,
    scale: float,
    train_counts: Sequence[int],
    test_counts: Sequence[int],
    seed: int,
    block: int = 5,
    signal_sd: float = 0.5,
    outlier_scale: float | None = None,
    outlier_block: int = 2,
) -> tuple[Dataset, Dataset]:
    """Many-class Gaussian benchmark: n_inlier observed classes plus
    n_outlier novel components appearing only in the test cohort.

    train_counts has one entry per inlier class; test_counts one entry per
    class including the outlier components (in order inliers, outliers).
    """
    if len(train_counts) != n_inlier:
        raise ConfigError("train_counts must have one entry per inlier class")
    if len(test_counts) != n_inlier + n_outlier:
        raise ConfigError("test_counts must cover inlier and outlier classes")
    specs = multiclass_specs(n_inlier, n_outlier, p, scale, block, signal_sd, outlier_scale, outlier_block)
    rng = spawn_rng(seed, "multiclass")
    tr_feats, tr_labels = [], []
    for j in range(n_inlier):
        if train_counts[j] < 1:
            raise ConfigError("train counts must be >= 1")
        tr_feats.append(specs[j].sample(train_counts[j], rng))
        tr_labels.append(np.full(train_counts[j], j + 1))
    te_feats, te_labels = [], []
    for j in range(n_inlier + n_outlier):
        if test_counts[j] < 0:
            raise ConfigError("test counts must be >= 0")
        if test_counts[j] == 0:
            continue
        te_feats.append(specs[j].sample(test_counts[j], rng))
        label = j + 1 if j < n_inlier else OUTLIER_LABEL
        te_labels.append(np.full(test_counts[j], label))
    names = tuple(str(j + 1) for j in range(n_inlier))
    train = Dataset(np.vstack(tr_feats), np.concatenate(tr_labels), names)
    test = Dataset(np.vstack(te_feats), np.concatenate(te_labels), names)
    return train, test


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def load_csv(path: str | Path, label_column: str | None = None) -> Dataset:
    """Read a comma-delimited numeric table, optionally with a label column.

    A single header row is auto-detected by a non-numeric first row.  Label
    values map to class indices 1..K in order of first appearance.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = [(i + 1, row) for i, row in enumerate(reader) if row]
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    header: list[str] | None = None
    first = rows[0][1]
    if any(not _is_number(tok) for tok in first):
        header = [tok.strip() for tok in first]
        rows = rows[1:]
    if not rows:
        raise ParseError(f"{path}: no data rows")

    label_idx: int | None = None
    if label_column is not None:
        if header is None:
            raise ConfigError(f"{path}: label column {label_column!r} requires a header row")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise ConfigError(f"{path}: unknown label column {label_column!r}") from None

    arity = len(first)
    n = len(rows)
    p = arity - (1 if label_idx is not None else 0)
    if p < 1:
        raise ParseError(f"{path}: no feature columns")
    feats = np.empty((n, p))
    raw_labels: list[str] = []
    for r, (lineno, row) in enumerate(rows):
        if len(row) != arity:
            raise ParseError(f"{path}:{lineno}: expected {arity} fields, got {len(row)}")
        j = 0
        for c, tok in enumerate(row):
            if c == label_idx:
                raw_labels.append(tok.strip())
                continue
            try:
                feats[r, j] = float(tok)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric feature value {tok!r}") from None
            j += 1

    if label_idx is None:
        return Dataset(feats, None, ())
    order: dict[str, int] = {}
    for tok in raw_labels:
        if tok not in order:
            order[tok] = len(order) + 1
    labels = np.array([order[tok] for tok in raw_labels], dtype=np.int64)
    return Dataset(feats, labels, tuple(order))


def write_csv(data: Dataset, path: str | Path, outlier_name: str = "R") -> None:
    """Write features (and labels, if present) with a header row."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = [f"f{j}" for j in range(data.p)]
        if data.labels is not None:
            cols.append("label")
        writer.writerow(cols)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            if data.labels is not None:
                lab = int(data.labels[i])
                row.append(outlier_name if lab == OUTLIER_LABEL else data.class_names[lab - 1])
            writer.writerow(row)


def relabel_outliers(data: Dataset, class_names: Sequence[str]) -> Dataset:
    """Turn the named classes into ground-truth outliers.

    The named classes leave the alphabet; remaining classes are renumbered
    contiguously preserving their order.
    """
    labels = data.require_labels()
    targets = set(class_names)
    unknown = targets - set(data.class_names)
    if unknown:
        raise ConfigError(f"unknown outlier class names: {sorted(unknown)}")
    keep = [name for name in data.class_names if name not in targets]
    remap = {data.class_names.index(name) + 1: i + 1 for i, name in enumerate(keep)}
    new_labels = np.empty_like(labels)
    for i, lab in enumerate(labels):
        lab = int(lab)
        if lab == OUTLIER_LABEL or data.class_names[lab - 1] in targets:
            new_labels[i] = OUTLIER_LABEL
        else:
            new_labels[i] = remap[lab]
    return Dataset(data.features, new_labels, tuple(keep))


def subsample_per_class(data: Dataset, counts: Mapping[int, int], seed: int) -> Dataset:
    """Uniform without-replacement subsample per class.

    counts maps class index (or OUTLIER_LABEL) to the requested row count;
    classes absent from the map are dropped entirely.  Kept classes are
    renumbered contiguously preserving the original class order.
    """
    labels = data.require_labels()
    rng = spawn_rng(seed, "subsample")
    available = data.class_counts()
    picked: list[np.ndarray] = []
    kept_classes: list[int] = []
    for cls in sorted(counts, key=lambda c: (c == OUTLIER_LABEL, c)):
        want = counts[cls]
        have = available.get(cls, 0)
        if want > have:
            name = "R" if cls == OUTLIER_LABEL else data.class_names[cls - 1]
            raise DataError(f"class {name}: requested {want} rows, only {have} available")
        if want == 0:
            continue
        idx = np.flatnonzero(labels == cls)
        sel = rng.choice(idx, size=want, replace=False)
        picked.append(np.sort(sel))
        kept_classes.append(cls)
    if not picked:
        raise DataError("subsample would be empty")
    rows = np.concatenate(picked)
    old_names = [data.class_names[c - 1] for c in kept_classes if c != OUTLIER_LABEL]
    remap = {c: i + 1 for i, c in enumerate(c for c in kept_classes if c != OUTLIER_LABEL)}
    remap[OUTLIER_LABEL] = OUTLIER_LABEL
    new_labels = np.array([remap[int(labels[i])] for i in rows], dtype=np.int64)
    return Dataset(data.features[rows], new_labels, tuple(old_names))
