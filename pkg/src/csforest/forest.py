"""Conformalized semi-supervised random forest (CSForest).

For each observed class k the method grows an ensemble of single trees,
each trained on a bootstrap of the class-k rows, a bootstrap of the
unlabeled test cohort, and (optionally, weighted by gamma) a bootstrap of
the remaining training rows.  A test sample's score against class k
compares it with every class-k training row using only the trees whose
bootstraps contain neither sample of the pair, and calibrates the rank of
those comparisons to a score on the grid {(1+j)/(n_k+1)}.  Thresholding
the scores at alpha yields per-class coverage >= 1-2*alpha under
generalized label shift, with empty sets flagging outliers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError
from .rng import kernel_seed, spawn_rng
from .sets import PredictionSets, ScoreMatrix
from .tree import TreeModel, TreeParams, fit_tree

__all__ = [
    "LABEL_SELF",
    "LABEL_OTHER",
    "LABEL_TEST",
    "CsForestParams",
    "ClassEnsemble",
    "AuditRecord",
    "tree_count_success_prob",
    "sample_tree_count",
    "build_class_ensemble",
    "pair_ensemble_fraction",
    "calibrated_scores",
    "prediction_sets",
    "run_csforest",
    "audit_strange_set",
]

log = logging.getLogger(__name__)

# Tree label alphabet: the target class, pooled other classes, test cohort.
LABEL_SELF = 0
LABEL_OTHER = 1
LABEL_TEST = 2


@dataclass(frozen=True)
class CsForestParams:
    """Inputs of the ensemble construction.

    gamma weights how many other-class rows each tree sees (0 disables
    them); b_tilde is the nominal tree count thinned binomially per class.
    """

    alpha: float = 0.05
    gamma: float = 1.0
    b_tilde: int = 3000
    tree: TreeParams = field(default_factory=TreeParams)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.b_tilde < 1:
            raise ConfigError("b_tilde must be >= 1")


@dataclass(frozen=True)
class ClassEnsemble:
    """Fitted trees for one class plus the in-bag records scoring needs."""

    class_index: int
    trees: tuple[TreeModel, ...]
    inbag_train: np.ndarray  # (B, n_k) bool, class-k bootstrap membership
    inbag_test: np.ndarray  # (B, m) bool, test bootstrap membership

    def __post_init__(self):
        self.inbag_train.setflags(write=False)
        self.inbag_test.setflags(write=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def fraction_matrix(self, x: np.ndarray) -> np.ndarray:
        """(B, len(x)) leaf fractions of the target class under every tree."""
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        out = np.empty((self.n_trees, x.shape[0]))
        for b, tree in enumerate(self.trees):
            out[b] = tree.fractions(x, LABEL_SELF)
        return out


def tree_count_success_prob(n_k: int) -> float:
    """Probability (1 - 1/(n_k+1))**n_k that thins the nominal tree count."""
    if n_k < 1:
        raise ConfigError("n_k must be >= 1")
    return (1.0 - 1.0 / (n_k + 1)) ** n_k


def sample_tree_count(b_tilde: int, n_k: int, rng: np.random.Generator) -> int:
    """Binomial(b_tilde, (1-1/(n_k+1))^n_k) draw, resampled until >= 1."""
    if b_tilde < 1:
        raise ConfigError("b_tilde must be >= 1")
    prob = tree_count_success_prob(n_k)
    b = int(rng.binomial(b_tilde, prob))
    while b == 0:
        log.info("tree count drew 0 (b_tilde=%d, n_k=%d); resampling", b_tilde, n_k)
        b = int(rng.binomial(b_tilde, prob))
    return b


def _other_bootstrap_size(m: int, gamma: float, n_other: int) -> int:
    return min(math.ceil(m * gamma), n_other)


def build_class_ensemble(
    class_features: np.ndarray,
    other_features: np.ndarray,
    test_features: np.ndarray,
    params: CsForestParams,
    rng: np.random.Generator,
    n_threads: int = 1,
    class_index: int = 0,
) -> ClassEnsemble:
    """Grow the per-class semi-supervised ensemble.

    Each of the B trees is fit on a size-n_k bootstrap of the class rows, a
    size-m bootstrap of the test rows, and min(ceil(m*gamma), n-n_k)
    other-class rows drawn with replacement.  All bootstrap draws and tree
    seeds come from `rng` sequentially, so the fitted ensemble does not
    depend on the thread count.
    """
    class_x = np.ascontiguousarray(np.asarray(class_features, dtype=np.float64))
    other_x = np.asarray(other_features, dtype=np.float64).reshape(-1, class_x.shape[1])
    test_x = np.ascontiguousarray(np.asarray(test_features, dtype=np.float64))
    n_k = class_x.shape[0]
    m = test_x.shape[0]
    if n_k < 1 or m < 1:
        raise DataError("need at least one class row and one test row")

    b_count = sample_tree_count(params.b_tilde, n_k, rng)
    n_other = _other_bootstrap_size(m, params.gamma, other_x.shape[0])

    inbag_train = np.zeros((b_count, n_k), dtype=bool)
    inbag_test = np.zeros((b_count, m), dtype=bool)
    tasks = []
    for b in range(b_count):
        tr_idx = rng.integers(0, n_k, size=n_k)
        te_idx = rng.integers(0, m, size=m)
        other_idx = rng.integers(0, other_x.shape[0], size=n_other) if n_other > 0 else None
        seed = kernel_seed(rng)
        inbag_train[b, tr_idx] = True
        inbag_test[b, te_idx] = True
        tasks.append((tr_idx, te_idx, other_idx, seed))

    def fit_one(task) -> TreeModel:
        tr_idx, te_idx, other_idx, seed = task
        blocks = [class_x[tr_idx], test_x[te_idx]]
        labels = [np.full(n_k, LABEL_SELF), np.full(m, LABEL_TEST)]
        if other_idx is not None:
            blocks.append(other_x[other_idx])
            labels.append(np.full(len(other_idx), LABEL_OTHER))
        return fit_tree(
            np.vstack(blocks),
            np.concatenate(labels),
            params.tree,
            spawn_rng(seed, "tree"),
        )

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            trees = tuple(pool.map(fit_one, tasks))
    else:
        trees = tuple(fit_one(t) for t in tasks)
    return ClassEnsemble(class_index, trees, inbag_train, inbag_test)


def pair_ensemble_fraction(
    ens: ClassEnsemble, test_index: int, train_index: int, x: np.ndarray
) -> float:
    """Mean target-class fraction over trees excluding the (test, train) pair.

    Returns NaN when no tree excludes both samples (degenerate pair); the
    calibration path treats such pairs conservatively.
    """
    eligible = ~ens.inbag_test[:, test_index] & ~ens.inbag_train[:, train_index]
    if not eligible.any():
        return float("nan")
    vals = [
        tree.fractions(np.atleast_2d(x), LABEL_SELF)[0]
        for b, tree in enumerate(ens.trees)
        if eligible[b]
    ]
    return float(sum(vals) / len(vals))


def _score_class(
    ens: ClassEnsemble, class_features: np.ndarray, test_features: np.ndarray
) -> np.ndarray:
    """Calibrated scores of every test row against one class.

    For the pair (i, i') the leave-pair-out comparison mean_b f_b(x_i) >=
    mean_b f_b(x_i') over the shared tree set is evaluated as a comparison
    of sums, computed with three (m x B)(B x n_k) matrix products over the
    out-of-bag indicator masks.
    """
    n_k = class_features.shape[0]
    m = test_features.shape[0]
    stacked = np.vstack([test_features, class_features])
    frac = ens.fraction_matrix(stacked)
    f_te, f_tr = frac[:, :m], frac[:, m:]
    o_te = (~ens.inbag_test).astype(np.float64)
    o_tr = (~ens.inbag_train).astype(np.float64)
    cnt = o_te.T @ o_tr
    sum_te = (o_te * f_te).T @ o_tr
    sum_tr = o_te.T @ (o_tr * f_tr)
    degenerate = cnt == 0
    if degenerate.any():
        log.debug("class %d: %d degenerate pairs", ens.class_index, int(degenerate.sum()))
    indicator = (sum_te >= sum_tr) | degenerate
    return (1.0 + indicator.sum(axis=1)) / (n_k + 1.0)


def calibrated_scores(
    ensembles: Mapping[int, ClassEnsemble],
    train: Dataset,
    test_features: np.ndarray,
) -> ScoreMatrix:
    """Assemble the (n_te, K) calibrated score matrix from per-class ensembles."""
    if set(ensembles) != set(range(1, train.n_classes + 1)):
        raise DataError("ensembles must cover classes 1..K")
    test_x = np.ascontiguousarray(np.asarray(test_features, dtype=np.float64))
    scores = np.empty((test_x.shape[0], train.n_classes))
    cal_sizes = np.empty(train.n_classes, dtype=np.int64)
    for k in range(1, train.n_classes + 1):
        class_x = train.rows_of_class(k)
        scores[:, k - 1] = _score_class(ensembles[k], class_x, test_x)
        cal_sizes[k - 1] = class_x.shape[0]
    return ScoreMatrix(scores, cal_sizes, train.class_names)


def prediction_sets(scores: ScoreMatrix, alpha: float) -> PredictionSets:
    """C(x_i) = {k : s_ik >= alpha}; the empty set flags an outlier."""
    return scores.prediction_sets(alpha)


def run_csforest(
    train: Dataset,
    test_features: np.ndarray,
    params: CsForestParams,
    n_threads: int = 1,
) -> tuple[ScoreMatrix, PredictionSets]:
    """Fit per-class ensembles, calibrate scores, and threshold at alpha.

    Ensembles are built and scored one class at a time (class k's trees are
    dropped before class k+1 is grown) with per-class derived RNG streams.
    """
    labels = train.require_labels()
    if (labels == -1).any():
        raise DataError("training data must not contain outlier-labeled rows")
    test_x = np.ascontiguousarray(np.asarray(test_features, dtype=np.float64))
    if test_x.ndim != 2 or test_x.shape[1] != train.p:
        raise DataError("test features must be (m, p) with training p")
    scores = np.empty((test_x.shape[0], train.n_classes))
    cal_sizes = np.empty(train.n_classes, dtype=np.int64)
    for k in range(1, train.n_classes + 1):
        class_x = train.rows_of_class(k)
        other_x = train.features[labels != k]
        rng = spawn_rng(params.seed, "csforest-class", k)
        ens = build_class_ensemble(
            class_x, other_x, test_x, params, rng, n_threads, class_index=k
        )
        scores[:, k - 1] = _score_class(ens, class_x, test_x)
        cal_sizes[k - 1] = class_x.shape[0]
    matrix = ScoreMatrix(scores, cal_sizes, train.class_names)
    return matrix, prediction_sets(matrix, params.alpha)


@dataclass(frozen=True)
class AuditRecord:
    """Result of one symmetric-characterization audit."""

    n_train: int
    alpha: float
    diagonal_ok: bool
    strange_size: int
    bound: float

    @property
    def ok(self) -> bool:
        return self.diagonal_ok and self.strange_size <= self.bound


def audit_strange_set(
    class_features: np.ndarray,
    other_features: np.ndarray,
    test_features: np.ndarray,
    held_test: np.ndarray,
    params: CsForestParams,
    alpha: float,
    rng: np.random.Generator,
) -> AuditRecord:
    """Re-score one held test point symmetrically and check the strange-set bound.

    The n class rows and the held test point are pooled; every tree draws a
    size-n bootstrap of the pooled n+1 rows (labeled as the class), plus the
    usual test and other-class bootstraps.  The pairwise comparison matrix
    A[l, j] = 1{mean-over-shared-trees fraction at row l >= at row j} must
    have a unit diagonal and a strange set no larger than 2*alpha*(n+1).
    """
    class_x = np.ascontiguousarray(np.asarray(class_features, dtype=np.float64))
    other_x = np.asarray(other_features, dtype=np.float64).reshape(-1, class_x.shape[1])
    test_x = np.asarray(test_features, dtype=np.float64).reshape(-1, class_x.shape[1])
    held = np.asarray(held_test, dtype=np.float64).reshape(1, -1)
    if held.shape[1] != class_x.shape[1]:
        raise DataError("held test point dimension mismatch")
    n = class_x.shape[0]
    pool = np.ascontiguousarray(np.vstack([class_x, held]))
    m = test_x.shape[0]
    n_other = _other_bootstrap_size(m, params.gamma, other_x.shape[0])

    b_tilde = params.b_tilde
    inpool = np.zeros((b_tilde, n + 1), dtype=bool)
    frac = np.empty((b_tilde, n + 1))
    for b in range(b_tilde):
        pool_idx = rng.integers(0, n + 1, size=n)
        blocks = [pool[pool_idx]]
        labels = [np.full(n, LABEL_SELF)]
        if m > 0:
            te_idx = rng.integers(0, m, size=m)
            blocks.append(test_x[te_idx])
            labels.append(np.full(m, LABEL_TEST))
        if n_other > 0:
            other_idx = rng.integers(0, other_x.shape[0], size=n_other)
            blocks.append(other_x[other_idx])
            labels.append(np.full(n_other, LABEL_OTHER))
        seed = kernel_seed(rng)
        tree = fit_tree(
            np.vstack(blocks), np.concatenate(labels), params.tree, spawn_rng(seed, "tree")
        )
        inpool[b, pool_idx] = True
        frac[b] = tree.fractions(pool, LABEL_SELF)

    oob = (~inpool).astype(np.float64)
    cnt = oob.T @ oob
    num = (oob * frac).T @ oob  # num[l, j] = sum over shared trees of frac at row l
    comparison = (num >= num.T) | (cnt == 0)
    diag_ok = bool(np.diagonal(comparison).all())
    row_sums = comparison.sum(axis=1)
    strange = int((row_sums <= (n + 1) * alpha - 1).sum())
    return AuditRecord(n, alpha, diag_ok, strange, 2 * alpha * (n + 1))
