import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csforest.dataset import Dataset, generate_example1
from csforest.errors import ConfigError
from csforest.evaluation import type_errors
from csforest.forest import (
    LABEL_OTHER,
    LABEL_SELF,
    LABEL_TEST,
    ClassEnsemble,
    CsForestParams,
    _other_bootstrap_size,
    audit_strange_set,
    build_class_ensemble,
    calibrated_scores,
    pair_ensemble_fraction,
    prediction_sets,
    run_csforest,
    sample_tree_count,
    tree_count_success_prob,
)
from csforest.rng import spawn_rng
from csforest.sets import ScoreMatrix
from csforest.tree import TreeModel, TreeParams, predict_fraction


def brute_force_scores(ens, class_rows, test_rows):
    """Independent re-implementation: materialize every leave-pair-out tree
    set explicitly and compare the per-pair ensemble means."""
    n_k = class_rows.shape[0]
    m = test_rows.shape[0]
    scores = np.empty(m)
    for i in range(m):
        wins = 0
        for ip in range(n_k):
            trees = [
                b
                for b in range(ens.n_trees)
                if not ens.inbag_test[b, i] and not ens.inbag_train[b, ip]
            ]
            if not trees:
                wins += 1  # degenerate pair counts for coverage
                continue
            f_i = sum(predict_fraction(ens.trees[b], test_rows[i], LABEL_SELF) for b in trees)
            f_ip = sum(predict_fraction(ens.trees[b], class_rows[ip], LABEL_SELF) for b in trees)
            if f_i / len(trees) >= f_ip / len(trees):
                wins += 1
        scores[i] = (1 + wins) / (n_k + 1)
    return scores


def stump(self_fraction_left, self_fraction_right, threshold=0.5):
    """Depth-1 tree on feature 0 with chosen target-class leaf fractions."""
    return TreeModel(
        feature=np.array([0, -1, -1], dtype=np.int32),
        threshold=np.array([threshold, 0.0, 0.0]),
        left=np.array([1, -1, -1], dtype=np.int32),
        right=np.array([2, -1, -1], dtype=np.int32),
        leaf_dist=np.array(
            [
                [0.0, 0.0],
                [self_fraction_left, 1 - self_fraction_left],
                [self_fraction_right, 1 - self_fraction_right],
            ]
        ),
        classes=np.array([LABEL_SELF, LABEL_TEST]),
        n_features=1,
    )


class TestTreeCount:
    def test_nk1_probability(self):
        assert tree_count_success_prob(1) == 0.5

    def test_nk1000_near_inverse_e(self):
        assert abs(tree_count_success_prob(1000) - math.exp(-1)) < 0.001

    def test_empirical_mean(self):
        expected = 3000 * (1 - 1 / 501) ** 500  # ~1103
        rng = spawn_rng(0, "count")
        draws = [sample_tree_count(3000, 500, rng) for _ in range(200)]
        assert abs(np.mean(draws) - expected) < 30

    def test_always_at_least_one(self):
        rng = spawn_rng(1, "count")
        assert all(sample_tree_count(1, 1, rng) >= 1 for _ in range(200))


class TestBuildEnsemble:
    def _inputs(self, n_k=12, n_other=10, m=15, seed=0):
        rng = np.random.default_rng(seed)
        return (
            rng.normal(size=(n_k, 3)),
            rng.normal(loc=2.0, size=(n_other, 3)),
            rng.normal(loc=1.0, size=(m, 3)),
        )

    def test_gamma_zero_two_class_alphabet(self):
        class_x, other_x, test_x = self._inputs()
        params = CsForestParams(gamma=0.0, b_tilde=20, seed=1)
        ens = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(1, "e"))
        for tree in ens.trees:
            assert set(tree.classes) == {LABEL_SELF, LABEL_TEST}
            assert predict_fraction(tree, test_x[0], LABEL_OTHER) == 0.0

    def test_other_bootstrap_size_rule(self):
        assert _other_bootstrap_size(200, 1.0, 200) == 200
        assert _other_bootstrap_size(10, 0.39, 100) == 4  # ceil(3.9)
        assert _other_bootstrap_size(500, 1.0, 123) == 123
        assert _other_bootstrap_size(7, 0.0, 100) == 0

    def test_inbag_probability(self):
        class_x, other_x, test_x = self._inputs(n_k=25)
        params = CsForestParams(gamma=1.0, b_tilde=600, seed=2)
        ens = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(2, "e"))
        expected = 1 - (1 - 1 / 25) ** 25
        assert abs(ens.inbag_train.mean() - expected) < 0.03

    def test_thread_count_irrelevant(self):
        class_x, other_x, test_x = self._inputs()
        params = CsForestParams(b_tilde=30, seed=3)
        a = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(3, "e"), n_threads=1)
        b = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(3, "e"), n_threads=4)
        assert a.n_trees == b.n_trees
        for ta, tb in zip(a.trees, b.trees):
            assert np.array_equal(ta.feature, tb.feature)
            assert np.array_equal(ta.threshold, tb.threshold)
        assert np.array_equal(a.inbag_train, b.inbag_train)


class TestPairFraction:
    def _manual_ensemble(self, inbag_train, inbag_test, trees):
        return ClassEnsemble(
            1,
            tuple(trees),
            np.asarray(inbag_train, dtype=bool),
            np.asarray(inbag_test, dtype=bool),
        )

    def test_single_eligible_tree_exact(self):
        ens = self._manual_ensemble([[False]], [[False]], [stump(0.2, 0.8)])
        assert pair_ensemble_fraction(ens, 0, 0, np.array([0.0])) == 0.2
        assert pair_ensemble_fraction(ens, 0, 0, np.array([1.0])) == 0.8

    def test_all_inbag_degenerate(self):
        ens = self._manual_ensemble([[True]], [[False]], [stump(0.2, 0.8)])
        assert math.isnan(pair_ensemble_fraction(ens, 0, 0, np.array([0.0])))

    def test_mean_of_three_trees(self):
        trees = [stump(0.2, 0.2), stump(0.4, 0.4), stump(0.9, 0.9)]
        ens = self._manual_ensemble([[False]] * 3, [[False]] * 3, trees)
        assert pair_ensemble_fraction(ens, 0, 0, np.array([0.0])) == pytest.approx(0.5)


class TestCalibratedScores:
    def test_two_of_three_comparisons(self):
        # tree A: fractions 0.1 (x<=0.5) / 0.9; tree B: 0.95 (x<=1.5) / 0.2
        trees = [stump(0.1, 0.9, threshold=0.5), stump(0.95, 0.2, threshold=1.5)]
        ens = ClassEnsemble(
            1, tuple(trees), np.zeros((2, 3), dtype=bool), np.zeros((2, 1), dtype=bool)
        )
        train = Dataset(np.array([[1.0], [0.0], [0.0]]), [1, 1, 1], ("1",))
        # test row at 2.0: mean fraction 0.55; train rows: 0.925 (loss), 0.525, 0.525
        matrix = calibrated_scores({1: ens}, train, np.array([[2.0]]))
        assert matrix.scores[0, 0] == pytest.approx(3 / 4)

    def test_all_fail_floor(self):
        trees = [stump(0.1, 0.9)]
        ens = ClassEnsemble(
            1, tuple(trees), np.zeros((1, 2), dtype=bool), np.zeros((1, 1), dtype=bool)
        )
        train = Dataset(np.array([[1.0], [1.0]]), [1, 1], ("1",))
        matrix = calibrated_scores({1: ens}, train, np.array([[0.0]]))
        assert matrix.scores[0, 0] == pytest.approx(1 / 3)

    def test_degenerate_pair_counts_as_success(self):
        trees = [stump(0.1, 0.9)]
        inbag_train = np.array([[True, False]])  # train row 0 never comparable
        ens = ClassEnsemble(1, tuple(trees), inbag_train, np.zeros((1, 1), dtype=bool))
        train = Dataset(np.array([[1.0], [1.0]]), [1, 1], ("1",))
        matrix = calibrated_scores({1: ens}, train, np.array([[0.0]]))
        # pair 0 degenerate (counts 1), pair 1 fails (0.1 < 0.9)
        assert matrix.scores[0, 0] == pytest.approx(2 / 3)

    def test_tiny_instance_matches_brute_force(self):
        rng = np.random.default_rng(0)
        class_x = rng.normal(size=(2, 2))
        other_x = rng.normal(loc=3.0, size=(3, 2))
        test_x = rng.normal(loc=1.0, size=(1, 2))
        params = CsForestParams(b_tilde=5, seed=4)
        ens = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(4, "e"))
        train = Dataset(class_x, [1, 1], ("1",))
        matrix = calibrated_scores({1: ens}, train, test_x)
        expected = brute_force_scores(ens, class_x, test_x)
        assert np.array_equal(matrix.scores[:, 0], expected)

    def test_larger_instance_matches_brute_force(self):
        rng = np.random.default_rng(5)
        class_x = rng.normal(size=(6, 3))
        other_x = rng.normal(loc=2.0, size=(8, 3))
        test_x = rng.normal(loc=0.5, size=(5, 3))
        params = CsForestParams(b_tilde=40, seed=6)
        ens = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(6, "e"))
        train = Dataset(class_x, [1] * 6, ("1",))
        matrix = calibrated_scores({1: ens}, train, test_x)
        expected = brute_force_scores(ens, class_x, test_x)
        assert np.array_equal(matrix.scores[:, 0], expected)

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(7)
        class_x = rng.normal(size=(8, 2))
        other_x = rng.normal(loc=2.0, size=(4, 2))
        test_x = rng.normal(size=(5, 2))
        params = CsForestParams(b_tilde=30, seed=8)
        ens = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(8, "e"))
        perm = rng.permutation(8)
        permuted = ClassEnsemble(1, ens.trees, ens.inbag_train[:, perm], ens.inbag_test)
        base = calibrated_scores({1: ens}, Dataset(class_x, [1] * 8, ("1",)), test_x)
        swapped = calibrated_scores(
            {1: permuted}, Dataset(class_x[perm], [1] * 8, ("1",)), test_x
        )
        assert np.array_equal(base.scores, swapped.scores)


class TestPredictionSets:
    def _matrix(self, rows, n_cal=19):
        rows = np.asarray(rows, dtype=float)
        return ScoreMatrix(rows, [n_cal] * rows.shape[1], tuple(str(i + 1) for i in range(rows.shape[1])))

    def test_threshold(self):
        sets = prediction_sets(self._matrix([[0.06, 0.04]]), 0.05)
        assert sets.labels_for_row(0) == ("1",)

    def test_boundary_inclusive(self):
        sets = prediction_sets(self._matrix([[0.05, 0.01]]), 0.05)
        assert sets.membership[0, 0]

    def test_all_below_is_outlier(self):
        sets = prediction_sets(self._matrix([[0.01, 0.04]]), 0.05)
        assert sets.is_empty()[0]

    def test_alpha_monotone_nesting(self):
        rng = np.random.default_rng(0)
        matrix = self._matrix(rng.uniform(size=(50, 3)))
        small = prediction_sets(matrix, 0.05).membership
        large = prediction_sets(matrix, 0.3).membership
        assert (large <= small).all()  # larger alpha gives subsets

    def test_alpha_validation(self):
        with pytest.raises(ConfigError):
            prediction_sets(self._matrix([[0.5]]), 1.0)


class TestScoreGridProperty:
    @given(seed=st.integers(0, 2_000))
    @settings(max_examples=8, deadline=None)
    def test_scores_on_grid(self, seed):
        rng = np.random.default_rng(seed)
        n_k = int(rng.integers(2, 8))
        class_x = rng.normal(size=(n_k, 2))
        other_x = rng.normal(loc=2.0, size=(3, 2))
        test_x = rng.normal(size=(4, 2))
        params = CsForestParams(b_tilde=15, seed=seed)
        ens = build_class_ensemble(class_x, other_x, test_x, params, spawn_rng(seed, "e"))
        matrix = calibrated_scores({1: ens}, Dataset(class_x, [1] * n_k, ("1",)), test_x)
        grid = np.arange(1, n_k + 2) / (n_k + 1)
        for s in matrix.scores[:, 0]:
            assert 0 < s <= 1
            assert np.isclose(grid, s).any()


class TestRunCsForest:
    def test_deterministic_across_threads(self):
        train, test = generate_example1(20, 15, seed=0)
        params = CsForestParams(b_tilde=60, seed=5)
        s1, _ = run_csforest(train, test.features, params, n_threads=1)
        s2, _ = run_csforest(train, test.features, params, n_threads=4)
        assert np.array_equal(s1.scores, s2.scores)

    def test_coverage_smoke(self):
        train, test = generate_example1(100, 60, seed=1)
        params = CsForestParams(alpha=0.05, b_tilde=300, seed=6)
        _, sets = run_csforest(train, test.features, params, n_threads=4)
        report = type_errors(sets, test.labels)
        assert report.per_class["1"].coverage >= 0.85
        assert report.per_class["2"].coverage >= 0.85
        assert report.per_class["R"].empty_rate >= 0.3

    def test_rejects_outlier_training_labels(self):
        train, test = generate_example1(10, 5, seed=2)
        with pytest.raises(Exception, match="outlier"):
            run_csforest(test, train.features, CsForestParams(b_tilde=5, seed=0))


class TestAudit:
    def _run(self, n, alpha, seed, b_tilde=20):
        rng = spawn_rng(seed, "audit")
        class_x = rng.normal(size=(n, 3))
        other_x = rng.normal(loc=1.0, size=(4, 3))
        test_x = rng.normal(loc=0.5, size=(4, 3))
        held = rng.normal(size=3)
        params = CsForestParams(alpha=alpha, b_tilde=b_tilde, seed=0)
        return audit_strange_set(class_x, other_x, test_x, held, params, alpha, rng)

    def test_diagonal_always_ones(self):
        for seed in range(10):
            assert self._run(6, 0.2, seed).diagonal_ok

    def test_n9_alpha005_strange_empty(self):
        # threshold (n+1)*alpha - 1 = -0.5 while row sums are >= 1
        record = self._run(9, 0.05, 3)
        assert record.strange_size == 0

    def test_bound_on_random_instances(self):
        for seed in range(60):
            n = 3 + seed % 10
            alpha = (0.05, 0.2, 0.5)[seed % 3]
            record = self._run(n, alpha, seed)
            assert record.ok, (n, alpha, seed, record)

    def test_alpha_half_nontrivial_threshold(self):
        record = self._run(3, 0.5, 11)
        assert record.bound == 2 * 0.5 * 4
        assert record.strange_size <= record.bound
