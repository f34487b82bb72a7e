"""CART-style decision trees with random feature subsets, plus bagged forests.

Trees split on Gini impurity at midpoints between consecutive sorted
feature values.  Ties among equal-impurity candidates resolve to the
lowest feature index, then the lowest threshold, so a (data, params, seed)
triple always yields the same tree.  The growing and routing loops are
numba-compiled and release the GIL, so callers can fit trees from a thread
pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, DataError
from .rng import kernel_seed

__all__ = [
    "TreeParams",
    "TreeModel",
    "ForestParams",
    "Forest",
    "bootstrap_indices",
    "fit_tree",
    "predict_fraction",
    "fit_forest",
]

_U64 = np.uint64


@njit(cache=True, nogil=True)
def _rng_next(state):
    # splitmix64: full-period 64-bit stream, identical on every platform
    state = state + _U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    z = z ^ (z >> _U64(31))
    return state, z


@njit(cache=True, nogil=True)
def _grow_tree(X, y, n_classes, mtry, max_depth, min_leaf, seed):
    """Grow one tree; returns (feature, threshold, left, right, leaf_dist).

    feature[i] == -1 marks node i as a leaf.  Split search maximizes
    sum-of-squared-class-counts / side size, an equivalent form of Gini
    reduction whose per-side numerators stay exact in int64.
    """
    n, p = X.shape
    max_nodes = 2 * n
    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    dist = np.zeros((max_nodes, n_classes), np.float64)

    idx = np.arange(n)
    buf = np.empty(n, np.int64)
    vals = np.empty(n, np.float64)
    counts = np.zeros(n_classes, np.int64)
    cl = np.zeros(n_classes, np.int64)
    cr = np.zeros(n_classes, np.int64)
    perm = np.arange(p)

    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    top = 1
    node_count = 1
    state = _U64(seed)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        m = hi - lo

        counts[:] = 0
        for t in range(lo, hi):
            counts[y[idx[t]]] += 1
        parent_ss = np.int64(0)
        n_present = 0
        for c in range(n_classes):
            parent_ss += counts[c] * counts[c]
            if counts[c] > 0:
                n_present += 1

        stop = n_present <= 1 or m < 2 * min_leaf
        if max_depth >= 0 and depth >= max_depth:
            stop = True

        best_score = parent_ss / m  # a split must strictly beat the parent
        best_f = -1
        best_thr = 0.0
        best_nl = 0

        if not stop:
            for t in range(mtry):
                state, r = _rng_next(state)
                j = t + np.int64(r % _U64(p - t))
                tmp = perm[t]
                perm[t] = perm[j]
                perm[j] = tmp
            sel = np.sort(perm[:mtry].copy())

            for fi in range(mtry):
                f = sel[fi]
                node_vals = vals[:m]
                for t in range(m):
                    node_vals[t] = X[idx[lo + t], f]
                order = np.argsort(node_vals)
                cl[:] = 0
                for c in range(n_classes):
                    cr[c] = counts[c]
                ssl = np.int64(0)
                ssr = parent_ss
                for jpos in range(m - 1):
                    c = y[idx[lo + order[jpos]]]
                    ssl += 2 * cl[c] + 1
                    cl[c] += 1
                    ssr -= 2 * cr[c] - 1
                    cr[c] -= 1
                    nl = jpos + 1
                    nr = m - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    v1 = node_vals[order[jpos]]
                    v2 = node_vals[order[jpos + 1]]
                    if v2 <= v1:
                        continue
                    score = ssl / nl + ssr / nr
                    if score > best_score:
                        best_score = score
                        best_f = f
                        best_thr = v1 + (v2 - v1) / 2.0
                        best_nl = nl

        if best_f < 0:
            for c in range(n_classes):
                dist[node, c] = counts[c] / m
            continue

        a = 0
        for t in range(lo, hi):
            if X[idx[t], best_f] <= best_thr:
                buf[a] = idx[t]
                a += 1
        b = a
        for t in range(lo, hi):
            if X[idx[t], best_f] > best_thr:
                buf[b] = idx[t]
                b += 1
        for t in range(m):
            idx[lo + t] = buf[t]

        lchild = node_count
        rchild = node_count + 1
        node_count += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lchild
        right[node] = rchild
        stack_node[top] = lchild
        stack_lo[top] = lo
        stack_hi[top] = lo + a
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = rchild
        stack_lo[top] = lo + a
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        dist[:node_count].copy(),
    )


@njit(cache=True, nogil=True)
def _leaf_ids(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True)
class TreeParams:
    """Hyperparameters for a single tree.

    max_depth None means unlimited; features_per_split None means
    ceil(sqrt(p)) resolved at fit time.
    """

    max_depth: int | None = None
    min_leaf: int = 1
    features_per_split: int | None = None
    split_criterion: str = "gini"

    def __post_init__(self):
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0 or None")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError("features_per_split must be >= 1 or None")
        if self.split_criterion != "gini":
            raise ConfigError(f"unsupported split criterion {self.split_criterion!r}")


@dataclass(frozen=True)
class TreeModel:
    """Fitted tree as flat node arrays; immutable and freely shareable.

    classes holds the fitted label alphabet (sorted); leaf_dist rows are
    the class fractions of the training rows that reached each leaf.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_dist: np.ndarray
    classes: np.ndarray
    n_features: int

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "leaf_dist", "classes"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if x.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {x.shape[1]}")
        return x

    def leaf_ids(self, x: np.ndarray) -> np.ndarray:
        x = self._check_dim(x)
        return _leaf_ids(self.feature, self.threshold, self.left, self.right, x)

    def distributions(self, x: np.ndarray) -> np.ndarray:
        """Leaf class-fraction rows for each input row, over self.classes."""
        return self.leaf_dist[self.leaf_ids(x)]

    def fractions(self, x: np.ndarray, target: int) -> np.ndarray:
        """Leaf fraction of `target` for each row; 0 if target is not in the alphabet."""
        pos = np.searchsorted(self.classes, target)
        if pos >= len(self.classes) or self.classes[pos] != target:
            return np.zeros(np.atleast_2d(x).shape[0])
        return self.leaf_dist[self.leaf_ids(x), pos]


def bootstrap_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n uniform draws with replacement from {0..n-1} plus the out-of-bag set."""
    if n < 1:
        raise DataError("bootstrap needs n >= 1")
    draws = rng.integers(0, n, size=n)
    oob = np.setdiff1d(np.arange(n), draws)
    return draws, oob


def fit_tree(
    features: np.ndarray,
    labels: np.ndarray,
    params: TreeParams,
    rng: np.random.Generator,
) -> TreeModel:
    """Grow one tree by greedy recursive Gini partitioning.

    At each node a features_per_split-subset of columns is sampled without
    replacement; a node with no impurity-reducing candidate becomes a leaf.
    """
    x = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if x.ndim != 2 or x.shape[0] < 1:
        raise DataError("fit_tree needs a non-empty 2-D feature matrix")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise DataError("labels must align with feature rows")
    classes, y_enc = np.unique(y, return_inverse=True)
    n, p = x.shape
    mtry = params.features_per_split
    if mtry is None:
        mtry = math.isqrt(p) + (0 if math.isqrt(p) ** 2 == p else 1)
    if mtry > p:
        raise ConfigError(f"features_per_split {mtry} exceeds p={p}")
    depth = -1 if params.max_depth is None else params.max_depth
    feature, threshold, left, right, dist = _grow_tree(
        x, y_enc.astype(np.int64), len(classes), mtry, depth, params.min_leaf, kernel_seed(rng)
    )
    return TreeModel(feature, threshold, left, right, dist, classes, p)


def predict_fraction(tree: TreeModel, x: np.ndarray, target: int) -> float:
    """Route one feature vector to its leaf and return the target-class fraction."""
    return float(tree.fractions(np.atleast_2d(x), target)[0])


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    tree: TreeParams = field(default_factory=TreeParams)

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")


@dataclass(frozen=True)
class Forest:
    """Bagged trees over a common alphabet; probabilities are mean leaf fractions."""

    trees: tuple[TreeModel, ...]
    classes: np.ndarray

    def __post_init__(self):
        self.classes.setflags(write=False)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        out = np.zeros((x.shape[0], len(self.classes)))
        for tree in self.trees:
            cols = np.searchsorted(self.classes, tree.classes)
            out[:, cols] += tree.distributions(x)
        return out / len(self.trees)


def fit_forest(
    features: np.ndarray,
    labels: np.ndarray,
    params: ForestParams,
    rng: np.random.Generator,
) -> Forest:
    """Standard bagging: each tree sees one bootstrap of the data."""
    x = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    trees = []
    for _ in range(params.n_trees):
        draws, _ = bootstrap_indices(x.shape[0], rng)
        trees.append(fit_tree(x[draws], y[draws], params.tree, rng))
    return Forest(tuple(trees), classes)
