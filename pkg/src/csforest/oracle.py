"""Known-density oracle prediction sets for synthetic Gaussian scenarios.

With every component density known, the optimal set at x keeps class k
whenever the density ratio f_k(x) / mu(x) is not in the lower alpha tail
of its own class-k distribution, where mu blends the test mixture with a
w-weighted training mixture.  Class-k quantiles are estimated by Monte
Carlo, so the construction works for any diagonal-Gaussian mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dataset import GaussianClassSpec
from .errors import ConfigError
from .rng import spawn_rng
from .sets import PredictionSets

__all__ = ["OracleSpec", "oracle_score", "oracle_sets"]


@dataclass(frozen=True)
class OracleSpec:
    """True component densities and mixture weights of a synthetic scenario."""

    class_specs: tuple[GaussianClassSpec, ...]
    train_weights: tuple[float, ...]
    test_weights: tuple[float, ...]
    outlier_weight: float
    outlier_spec: GaussianClassSpec | None
    w: float = 1.0
    mc_count: int = 50_000
    seed: int = 0

    def __post_init__(self):
        k = len(self.class_specs)
        if len(self.train_weights) != k or len(self.test_weights) != k:
            raise ConfigError("one train and one test weight per class required")
        if abs(sum(self.train_weights) - 1.0) > 1e-9:
            raise ConfigError("train weights must sum to 1")
        if abs(sum(self.test_weights) + self.outlier_weight - 1.0) > 1e-9:
            raise ConfigError("test weights plus outlier weight must sum to 1")
        if self.outlier_weight > 0 and self.outlier_spec is None:
            raise ConfigError("nonzero outlier weight needs an outlier spec")
        if self.w < 0:
            raise ConfigError("w must be >= 0")
        if self.mc_count < 1000:
            raise ConfigError("mc_count must be >= 1000")

    @property
    def n_classes(self) -> int:
        return len(self.class_specs)


def _log_mu(spec: OracleSpec, x: np.ndarray) -> np.ndarray:
    """log of mu(x) = f_te(x) + w * f_tr(x) as one weighted mixture."""
    weights = []
    parts = []
    for k, comp in enumerate(spec.class_specs):
        wk = spec.test_weights[k] + spec.w * spec.train_weights[k]
        if wk > 0:
            weights.append(wk)
            parts.append(comp.log_density(x))
    if spec.outlier_weight > 0:
        weights.append(spec.outlier_weight)
        parts.append(spec.outlier_spec.log_density(x))
    stack = np.stack(parts, axis=0)
    return logsumexp(stack, axis=0, b=np.asarray(weights)[:, None])


def _log_scores(spec: OracleSpec, x: np.ndarray, k: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return spec.class_specs[k - 1].log_density(x) - _log_mu(spec, x)


def oracle_score(spec: OracleSpec, x: np.ndarray, k: int) -> float:
    """Density ratio f_k(x) / mu(x) for one feature vector."""
    if not 1 <= k <= spec.n_classes:
        raise ConfigError(f"class {k} outside 1..{spec.n_classes}")
    return float(np.exp(_log_scores(spec, x, k))[0])


def oracle_sets(spec: OracleSpec, test_features: np.ndarray, alpha: float) -> PredictionSets:
    """Include k at x iff P_MC[score_k(x) >= score_k(X), X ~ f_k] >= alpha.

    Ranks are computed on log scores (monotone in the ratio) for numerical
    stability, with the queried point's own comparison counted as in
    conformal ranks, so the threshold is vacuous as alpha -> 0 and the
    estimate stays conservative at finite Monte Carlo size.  Draws derive
    from (seed, class) streams.
    """
    if not 0 < alpha < 1:
        raise ConfigError("alpha must be in (0, 1)")
    test_x = np.atleast_2d(np.asarray(test_features, dtype=np.float64))
    membership = np.zeros((test_x.shape[0], spec.n_classes), dtype=bool)
    for k in range(1, spec.n_classes + 1):
        rng = spawn_rng(spec.seed, "oracle-mc", k)
        draws = spec.class_specs[k - 1].sample(spec.mc_count, rng)
        ref = np.sort(_log_scores(spec, draws, k))
        test_scores = _log_scores(spec, test_x, k)
        frac_below = (1 + np.searchsorted(ref, test_scores, side="right")) / (spec.mc_count + 1)
        membership[:, k - 1] = frac_below >= alpha
    names = tuple(str(i + 1) for i in range(spec.n_classes))
    return PredictionSets(membership, names)
