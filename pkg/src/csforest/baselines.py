"""Comparison methods sharing one split-conformal calibration engine.

CRF thresholds forest class probabilities, DC thresholds class-conditional
kernel density estimates, BCOPS fits per-class forests separating a class
from the test cohort with crossed train/test folds, and ACRF (optionally
randomized, optionally with covariate-shift weighting) thresholds the
cumulative-probability conformity score at a marginally calibrated level.
All methods emit PredictionSets over the training alphabet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .dataset import Dataset
from .errors import ConfigError, DataError
from .rng import spawn_rng
from .sets import PredictionSets
from .tree import ForestParams, fit_forest

__all__ = [
    "SplitPlan",
    "ProductKde",
    "split_conformal_pvalue",
    "crf",
    "dc",
    "bcops",
    "acrf_score",
    "acrf",
    "acrf_shift",
    "conformal_quantile",
    "weighted_conformal_quantile",
]

# Estimated test-vs-train probabilities are clamped away from {0, 1} before
# forming odds, preventing infinite covariate-shift weights.
ODDS_CLAMP = 1e-3


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint fold indices for split-conformal methods.

    train_fold1 fits models, train_fold2 calibrates; the optional test
    folds serve the crossed schemes (BCOPS, shift-weighted ACRF).
    """

    train_fold1: np.ndarray
    train_fold2: np.ndarray
    test_fold1: np.ndarray | None
    test_fold2: np.ndarray | None
    seed: int

    def __post_init__(self):
        f1 = np.asarray(self.train_fold1, dtype=np.int64)
        f2 = np.asarray(self.train_fold2, dtype=np.int64)
        if np.intersect1d(f1, f2).size:
            raise DataError("training folds overlap")
        if f1.size == 0 or f2.size == 0:
            raise DataError("training folds must be non-empty")
        object.__setattr__(self, "train_fold1", f1)
        object.__setattr__(self, "train_fold2", f2)
        if (self.test_fold1 is None) != (self.test_fold2 is None):
            raise ConfigError("test folds must be given together")
        if self.test_fold1 is not None:
            t1 = np.asarray(self.test_fold1, dtype=np.int64)
            t2 = np.asarray(self.test_fold2, dtype=np.int64)
            if np.intersect1d(t1, t2).size:
                raise DataError("test folds overlap")
            object.__setattr__(self, "test_fold1", t1)
            object.__setattr__(self, "test_fold2", t2)

    def require_test_folds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.test_fold1 is None or self.test_fold2 is None:
            raise ConfigError("this method needs a plan with test folds")
        return self.test_fold1, self.test_fold2

    @staticmethod
    def stratified(train: Dataset, n_test: int | None = None, seed: int = 0) -> SplitPlan:
        """50/50 class-stratified training split, plus a test split if n_test given."""
        labels = train.require_labels()
        rng = spawn_rng(seed, "split-plan")
        fold1, fold2 = [], []
        for k in range(1, train.n_classes + 1):
            idx = np.flatnonzero(labels == k)
            if idx.size < 2:
                raise DataError(f"class {train.class_names[k - 1]} has fewer than 2 rows")
            perm = rng.permutation(idx)
            half = (idx.size + 1) // 2
            fold1.append(perm[:half])
            fold2.append(perm[half:])
        t1 = t2 = None
        if n_test is not None:
            if n_test < 2:
                raise DataError("test split needs at least 2 samples")
            perm = rng.permutation(n_test)
            half = (n_test + 1) // 2
            t1, t2 = perm[:half], perm[half:]
        return SplitPlan(np.sort(np.concatenate(fold1)), np.sort(np.concatenate(fold2)), t1, t2, seed)


def split_conformal_pvalue(scores_cal, score_test: float) -> float:
    """(1 + #{cal_i <= test}) / (n + 1); higher scores mean more conforming."""
    cal = np.asarray(scores_cal, dtype=np.float64)
    if cal.size < 1:
        raise DataError("need at least one calibration score")
    return float((1.0 + (score_test >= cal).sum()) / (cal.size + 1.0))


def _pvalues(cal: np.ndarray, tests: np.ndarray) -> np.ndarray:
    cal_sorted = np.sort(cal)
    counts = np.searchsorted(cal_sorted, tests, side="right")
    return (1.0 + counts) / (cal.size + 1.0)


def _check_test(train: Dataset, test_features) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(test_features, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != train.p:
        raise DataError("test features must be (m, p) with training p")
    return x


def _fold_class_rows(train: Dataset, fold: np.ndarray, k: int) -> np.ndarray:
    rows = fold[train.require_labels()[fold] == k]
    if rows.size == 0:
        raise DataError(f"class {train.class_names[k - 1]} missing from a fold")
    return rows


def crf(
    train: Dataset,
    test_features: np.ndarray,
    alpha: float,
    forest_params: ForestParams,
    plan: SplitPlan,
) -> PredictionSets:
    """Conformalized random forest: per-class p-values on predicted probabilities."""
    test_x = _check_test(train, test_features)
    labels = train.require_labels()
    forest = fit_forest(
        train.features[plan.train_fold1],
        labels[plan.train_fold1],
        forest_params,
        spawn_rng(plan.seed, "crf-forest"),
    )
    proba_cal = forest.predict_proba(train.features[plan.train_fold2])
    proba_test = forest.predict_proba(test_x)
    membership = np.zeros((test_x.shape[0], train.n_classes), dtype=bool)
    for k in range(1, train.n_classes + 1):
        _fold_class_rows(train, plan.train_fold1, k)
        cal_rows = _fold_class_rows(train, plan.train_fold2, k)
        col = int(np.searchsorted(forest.classes, k))
        cal = proba_cal[np.isin(plan.train_fold2, cal_rows), col]
        membership[:, k - 1] = _pvalues(cal, proba_test[:, col]) >= alpha
    return PredictionSets(membership, train.class_names)


class ProductKde:
    """Gaussian product-kernel density estimate with per-dimension bandwidths.

    Bandwidths default to Silverman's rule with a floor of
    1e-6 * (feature range + 1e-12) so constant dimensions survive; density
    evaluation happens in log space to avoid underflow in high dimension.
    """

    def __init__(self, rows: np.ndarray, bandwidths: np.ndarray | None = None):
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[0] < 1:
            raise DataError("KDE needs at least one row")
        self.rows = rows
        n, p = rows.shape
        if bandwidths is None:
            sd = rows.std(axis=0, ddof=1) if n >= 2 else np.zeros(p)
            h = sd * (4.0 / ((p + 2.0) * n)) ** (1.0 / (p + 4.0))
            span = rows.max(axis=0) - rows.min(axis=0)
            h = np.maximum(h, 1e-6 * (span + 1e-12))
        else:
            h = np.asarray(bandwidths, dtype=np.float64)
            if h.shape != (p,) or not (h > 0).all():
                raise ConfigError("bandwidths must be p positive values")
        self.bandwidths = h
        self._log_norm = np.log(h).sum() + 0.5 * p * math.log(2 * math.pi) + math.log(n)

    def log_density(self, query: np.ndarray, chunk: int = 256) -> np.ndarray:
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        out = np.empty(query.shape[0])
        for lo in range(0, query.shape[0], chunk):
            q = query[lo : lo + chunk]
            z = (q[:, None, :] - self.rows[None, :, :]) / self.bandwidths
            logk = -0.5 * (z * z).sum(axis=2)
            out[lo : lo + chunk] = logsumexp(logk, axis=1) - self._log_norm
        return out


def dc(
    train: Dataset,
    test_features: np.ndarray,
    alpha: float,
    plan: SplitPlan,
    bandwidths: np.ndarray | None = None,
) -> PredictionSets:
    """Density-set classifier: p-values on class-conditional KDE log densities."""
    test_x = _check_test(train, test_features)
    membership = np.zeros((test_x.shape[0], train.n_classes), dtype=bool)
    for k in range(1, train.n_classes + 1):
        fit_rows = _fold_class_rows(train, plan.train_fold1, k)
        cal_rows = _fold_class_rows(train, plan.train_fold2, k)
        kde = ProductKde(train.features[fit_rows], bandwidths)
        cal = kde.log_density(train.features[cal_rows])
        membership[:, k - 1] = _pvalues(cal, kde.log_density(test_x)) >= alpha
    return PredictionSets(membership, train.class_names)


def bcops(
    train: Dataset,
    test_features: np.ndarray,
    alpha: float,
    forest_params: ForestParams,
    plan: SplitPlan,
) -> PredictionSets:
    """Balanced/conformalized optimal prediction sets via crossed folds.

    For each (train fold, test fold) pairing, a per-class forest separates
    class-k rows from the test-fold rows; the held-out train fold
    calibrates and the held-out test fold receives predictions, so the two
    crossings cover every test row exactly once.
    """
    test_x = _check_test(train, test_features)
    t1, t2 = plan.require_test_folds()
    labels = train.require_labels()
    membership = np.zeros((test_x.shape[0], train.n_classes), dtype=bool)
    crossings = [
        (plan.train_fold1, t1, plan.train_fold2, t2, 0),
        (plan.train_fold2, t2, plan.train_fold1, t1, 1),
    ]
    for k in range(1, train.n_classes + 1):
        for fit_fold, fit_test, cal_fold, out_test, tag in crossings:
            class_rows = _fold_class_rows(train, fit_fold, k)
            cal_rows = _fold_class_rows(train, cal_fold, k)
            if fit_test.size == 0 or out_test.size == 0:
                raise DataError("empty test fold")
            x_fit = np.vstack([train.features[class_rows], test_x[fit_test]])
            y_fit = np.concatenate([np.ones(class_rows.size, dtype=np.int64),
                                    np.zeros(fit_test.size, dtype=np.int64)])
            forest = fit_forest(
                x_fit, y_fit, forest_params, spawn_rng(plan.seed, "bcops-forest", k, tag)
            )
            col = int(np.searchsorted(forest.classes, 1))
            cal = forest.predict_proba(train.features[cal_rows])[:, col]
            test_scores = forest.predict_proba(test_x[out_test])[:, col]
            membership[out_test, k - 1] = _pvalues(cal, test_scores) >= alpha
    return PredictionSets(membership, train.class_names)


def _descending_order(pi: np.ndarray) -> np.ndarray:
    # stable: equal probabilities keep ascending class order
    return np.argsort(-pi, kind="stable")


def acrf_score(
    pi: np.ndarray,
    y: int,
    u: float | None = None,
    randomized: bool = False,
) -> float:
    """Generalized inverse-quantile conformity score of label y under pi.

    Non-randomized: the cumulative probability of the classes ranked
    strictly above y.  Randomized: that plus (1-u) of y's own mass, the
    closed form of the tie-broken minimum threshold.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 1 or abs(pi.sum() - 1.0) > 1e-9 or (pi < 0).any():
        raise ConfigError("pi must be a probability vector (sum 1 within 1e-9)")
    if not 1 <= y <= pi.size:
        raise ConfigError(f"label {y} outside 1..{pi.size}")
    if randomized and u is None:
        raise ConfigError("randomized score needs u in [0, 1]")
    order = _descending_order(pi)
    pos = int(np.flatnonzero(order == y - 1)[0])
    cums = np.cumsum(pi[order])
    if randomized:
        return float(cums[pos] - u * pi[order[pos]])
    return float(cums[pos - 1]) if pos >= 1 else 0.0


def _acrf_set(pi: np.ndarray, tau: float, u: float | None = None) -> np.ndarray:
    """Membership S(x; pi, tau): smallest top-probability prefix exceeding tau.

    With u given, the randomized variant (weak cumulative inequality and
    tie randomization on the boundary class) is applied instead.
    """
    order = _descending_order(pi)
    cums = np.cumsum(pi[order])
    member = np.zeros(pi.size, dtype=bool)
    if u is None:
        above = np.flatnonzero(cums > tau)
        count = int(above[0]) + 1 if above.size else pi.size
    else:
        above = np.flatnonzero(cums >= tau)
        if above.size:
            lsize = int(above[0]) + 1
            v = (cums[lsize - 1] - tau) / pi[order[lsize - 1]] if pi[order[lsize - 1]] > 0 else 0.0
            count = lsize - 1 if u < v else lsize
        else:
            count = pi.size
    member[order[:count]] = True
    return member


def conformal_quantile(values: np.ndarray, alpha: float) -> float:
    """Level-(1-alpha) quantile of the empirical distribution of values + {+inf}."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    k = math.ceil((1.0 - alpha) * (n + 1))
    if k > n:
        return math.inf
    return float(np.sort(values)[k - 1])


def weighted_conformal_quantile(
    values: np.ndarray, weights: np.ndarray, level: float
) -> float:
    """Smallest v with cumulative weight of {mass <= v} >= level, else +inf.

    The remaining weight (the +inf atom) closes the distribution.  A 1e-12
    slack absorbs cumulative-sum rounding so equal weights reproduce the
    unweighted quantile index exactly.
    """
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order])
    pos = int(np.searchsorted(cw, level - 1e-12, side="left"))
    if pos >= values.size:
        return math.inf
    return float(values[order][pos])


def _fit_pi_and_scores(
    train: Dataset,
    test_x: np.ndarray,
    forest_params: ForestParams,
    plan: SplitPlan,
    randomized: bool,
):
    labels = train.require_labels()
    forest = fit_forest(
        train.features[plan.train_fold1],
        labels[plan.train_fold1],
        forest_params,
        spawn_rng(plan.seed, "acrf-forest"),
    )
    if forest.classes.size != train.n_classes:
        raise DataError("every class must appear in the fitting fold")
    proba_cal = forest.predict_proba(train.features[plan.train_fold2])
    proba_test = forest.predict_proba(test_x)
    cal_labels = labels[plan.train_fold2]
    u_cal = None
    if randomized:
        u_cal = spawn_rng(plan.seed, "acrf-u-cal").uniform(size=cal_labels.size)
    scores = np.array(
        [
            acrf_score(
                proba_cal[i],
                int(cal_labels[i]),
                None if u_cal is None else float(u_cal[i]),
                randomized,
            )
            for i in range(cal_labels.size)
        ]
    )
    return proba_test, scores


def acrf(
    train: Dataset,
    test_features: np.ndarray,
    alpha: float,
    forest_params: ForestParams,
    plan: SplitPlan,
    randomized: bool = False,
) -> PredictionSets:
    """Adaptive-coverage conformal forest with a marginal coverage target."""
    test_x = _check_test(train, test_features)
    proba_test, scores = _fit_pi_and_scores(train, test_x, forest_params, plan, randomized)
    tau = conformal_quantile(scores, alpha)
    u_test = None
    if randomized:
        u_test = spawn_rng(plan.seed, "acrf-u-test").uniform(size=test_x.shape[0])
    membership = np.zeros((test_x.shape[0], train.n_classes), dtype=bool)
    for i in range(test_x.shape[0]):
        membership[i] = _acrf_set(
            proba_test[i], tau, None if u_test is None else float(u_test[i])
        )
    return PredictionSets(membership, train.class_names)


def acrf_shift(
    train: Dataset,
    test_features: np.ndarray,
    alpha: float,
    forest_params: ForestParams,
    plan: SplitPlan,
    randomized: bool = False,
    odds_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> PredictionSets:
    """ACRF reweighted for covariate shift via estimated test/train odds.

    Odds come from a forest separating a test fold from the model-fitting
    train fold (crossed so each test fold is served by the other fold's
    model); `odds_fn` overrides the estimate, e.g. for the constant-odds
    reduction to plain ACRF.
    """
    test_x = _check_test(train, test_features)
    t1, t2 = plan.require_test_folds()
    proba_test, scores = _fit_pi_and_scores(train, test_x, forest_params, plan, randomized)
    labels = train.require_labels()
    cal_x = train.features[plan.train_fold2]
    u_test = None
    if randomized:
        u_test = spawn_rng(plan.seed, "acrf-u-test").uniform(size=test_x.shape[0])
    membership = np.zeros((test_x.shape[0], train.n_classes), dtype=bool)
    level = 1.0 - alpha
    for fit_test, out_test, tag in [(t1, t2, 0), (t2, t1, 1)]:
        if odds_fn is None:
            x_fit = np.vstack([train.features[plan.train_fold1], test_x[fit_test]])
            y_fit = np.concatenate(
                [np.zeros(plan.train_fold1.size, dtype=np.int64),
                 np.ones(fit_test.size, dtype=np.int64)]
            )
            forest = fit_forest(
                x_fit, y_fit, forest_params, spawn_rng(plan.seed, "odds-forest", tag)
            )
            col = int(np.searchsorted(forest.classes, 1))

            def odds(x: np.ndarray, _forest=forest, _col=col) -> np.ndarray:
                prob = np.clip(_forest.predict_proba(x)[:, _col], ODDS_CLAMP, 1 - ODDS_CLAMP)
                return prob / (1.0 - prob)

        else:
            odds = odds_fn
        r_cal = np.asarray(odds(cal_x), dtype=np.float64)
        r_out = np.asarray(odds(test_x[out_test]), dtype=np.float64)
        if (r_cal < 0).any() or (r_out < 0).any():
            raise DataError("odds must be non-negative")
        for j, i in enumerate(out_test):
            total = r_out[j] + r_cal.sum()
            tau = weighted_conformal_quantile(scores, r_cal / total, level)
            membership[i] = _acrf_set(
                proba_test[i], tau, None if u_test is None else float(u_test[i])
            )
    return PredictionSets(membership, train.class_names)
