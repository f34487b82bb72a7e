"""Conformalized semi-supervised random forests for set-valued prediction.

The package pairs per-class semi-supervised tree ensembles with
leave-pair-out conformal calibration to produce prediction sets that cover
true labels under generalized label shift and reject outliers via the
empty set, alongside split-conformal baselines, a known-density oracle,
and an experiment CLI.
"""

from .baselines import SplitPlan, acrf, acrf_score, acrf_shift, bcops, crf, dc, split_conformal_pvalue
from .dataset import (
    OUTLIER_LABEL,
    Dataset,
    GaussianClassSpec,
    ShiftScenario,
    generate_example1,
    generate_multiclass,
    load_csv,
    sample_shift_scenario,
    subsample_per_class,
)
from .errors import ConfigError, CsForestError, DataError, ParseError
from .evaluation import EvalReport, aggregate_runs, type_errors
from .forest import (
    ClassEnsemble,
    CsForestParams,
    audit_strange_set,
    build_class_ensemble,
    calibrated_scores,
    pair_ensemble_fraction,
    prediction_sets,
    run_csforest,
    sample_tree_count,
)
from .oracle import OracleSpec, oracle_score, oracle_sets
from .sets import PredictionSets, ScoreMatrix
from .tree import Forest, ForestParams, TreeModel, TreeParams, bootstrap_indices, fit_forest, fit_tree, predict_fraction

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "OUTLIER_LABEL",
    "Dataset",
    "GaussianClassSpec",
    "ShiftScenario",
    "generate_example1",
    "generate_multiclass",
    "load_csv",
    "sample_shift_scenario",
    "subsample_per_class",
    "TreeParams",
    "TreeModel",
    "ForestParams",
    "Forest",
    "bootstrap_indices",
    "fit_tree",
    "fit_forest",
    "predict_fraction",
    "CsForestParams",
    "ClassEnsemble",
    "sample_tree_count",
    "build_class_ensemble",
    "pair_ensemble_fraction",
    "calibrated_scores",
    "prediction_sets",
    "run_csforest",
    "audit_strange_set",
    "SplitPlan",
    "split_conformal_pvalue",
    "crf",
    "dc",
    "bcops",
    "acrf_score",
    "acrf",
    "acrf_shift",
    "OracleSpec",
    "oracle_score",
    "oracle_sets",
    "ScoreMatrix",
    "PredictionSets",
    "EvalReport",
    "type_errors",
    "aggregate_runs",
    "CsForestError",
    "ConfigError",
    "DataError",
    "ParseError",
]
