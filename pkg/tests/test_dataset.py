import numpy as np
import pytest
from scipy import stats

from csforest.dataset import (
    OUTLIER_LABEL,
    Dataset,
    GaussianClassSpec,
    ShiftScenario,
    generate_example1,
    generate_multiclass,
    load_csv,
    relabel_outliers,
    sample_shift_scenario,
    subsample_per_class,
    write_csv,
)
from csforest.errors import ConfigError, DataError, ParseError


class TestDatasetType:
    def test_basic_invariants(self):
        data = Dataset(np.zeros((3, 2)), [1, 2, 1], ("a", "b"))
        assert data.n == 3 and data.p == 2 and data.n_classes == 2
        assert not data.features.flags.writeable

    def test_label_out_of_range(self):
        with pytest.raises(DataError, match="label"):
            Dataset(np.zeros((2, 2)), [1, 3], ("a", "b"))

    def test_outlier_sentinel_allowed(self):
        data = Dataset(np.zeros((2, 2)), [1, OUTLIER_LABEL], ("a",))
        assert data.class_counts() == {OUTLIER_LABEL: 1, 1: 1}

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((0, 2)), None, ())


class TestExample1:
    def test_paper_counts(self):
        train, test = generate_example1(200, 200, seed=5)
        assert (train.n, train.p) == (400, 10)
        assert (test.n, test.p) == (600, 10)

    def test_minimal_counts(self):
        train, test = generate_example1(1, 1, seed=5)
        assert train.n == 2 and test.n == 3

    def test_label_alphabets(self):
        train, test = generate_example1(20, 20, seed=5)
        assert set(np.unique(train.labels)) == {1, 2}
        assert set(np.unique(test.labels)) == {1, 2, OUTLIER_LABEL}

    def test_class2_x1_mean(self):
        # MC standard error 0.5/sqrt(200) ~ 0.035; 4 sigma tolerance
        train, _ = generate_example1(200, 200, seed=11)
        x1 = train.rows_of_class(2)[:, 0]
        assert abs(x1.mean() - 3.0) < 0.15

    def test_deterministic(self):
        a_train, a_test = generate_example1(50, 50, seed=3)
        b_train, b_test = generate_example1(50, 50, seed=3)
        assert np.array_equal(a_train.features, b_train.features)
        assert np.array_equal(a_test.features, b_test.features)

    def test_bad_counts(self):
        with pytest.raises(ConfigError):
            generate_example1(0, 5, seed=1)


def _spec(mean, sd):
    return GaussianClassSpec(np.asarray(mean, float), np.asarray(sd, float))


class TestShiftScenario:
    def test_degenerate_single_class(self):
        sc = ShiftScenario((_spec([0.0], [1.0]),), (1.0,), None, 0.0, 50, seed=1)
        data = sample_shift_scenario(sc)
        assert (data.labels == 1).all()

    def test_all_outliers(self):
        sc = ShiftScenario((), (), _spec([5.0], [1.0]), 1.0, 30, seed=1)
        data = sample_shift_scenario(sc)
        assert (data.labels == OUTLIER_LABEL).all()

    def test_binomial_fraction(self):
        specs = (_spec([0.0], [1.0]), _spec([4.0], [1.0]))
        sc = ShiftScenario(specs, (0.5, 0.5), None, 0.0, 10_000, seed=2)
        data = sample_shift_scenario(sc)
        frac = (data.labels == 1).mean()
        assert abs(frac - 0.5) < 0.02

    def test_weight_sum_violation(self):
        with pytest.raises(ConfigError, match="sum to 1"):
            ShiftScenario((_spec([0.0], [1.0]),), (0.7,), None, 0.2, 10, seed=0)

    def test_chi_square_convergence(self):
        specs = (_spec([0.0], [1.0]), _spec([4.0], [1.0]))
        sc = ShiftScenario(specs, (0.3, 0.5), _spec([8.0], [1.0]), 0.2, 100_000, seed=9)
        data = sample_shift_scenario(sc)
        observed = [
            (data.labels == 1).sum(),
            (data.labels == 2).sum(),
            (data.labels == OUTLIER_LABEL).sum(),
        ]
        expected = [0.3 * sc.n, 0.5 * sc.n, 0.2 * sc.n]
        _, pval = stats.chisquare(observed, expected)
        assert pval > 0.001

    def test_deterministic(self):
        sc = ShiftScenario((_spec([0.0], [1.0]),), (0.5,), _spec([3.0], [1.0]), 0.5, 100, seed=4)
        assert np.array_equal(
            sample_shift_scenario(sc).features, sample_shift_scenario(sc).features
        )


class TestLoadCsv:
    def test_labeled_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,c,d,label\n1,2,3,4,x\n5,6,7,8,y\n9,1,2,3,x\n")
        data = load_csv(path, label_column="label")
        assert data.n == 3 and data.p == 4
        assert data.class_names == ("x", "y")
        assert list(data.labels) == [1, 2, 1]

    def test_header_only(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n")
        with pytest.raises(ParseError, match="no data rows"):
            load_csv(path)

    def test_mnist_style_width(self, tmp_path):
        # label plus p=784 pixel columns, as in a standard MNIST CSV export
        path = tmp_path / "m.csv"
        header = ",".join(["label"] + [f"px{i}" for i in range(784)])
        row = ",".join(["7"] + ["0"] * 784)
        path.write_text(header + "\n" + row + "\n" + row + "\n")
        data = load_csv(path, label_column="label")
        assert data.p == 784

    def test_bad_arity_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(ParseError, match=":3"):
            load_csv(path)

    def test_non_numeric_feature_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(ParseError, match=":3"):
            load_csv(path)

    def test_unknown_label_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError, match="unknown label column"):
            load_csv(path, label_column="nope")

    def test_no_header_numeric(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2\n3,4\n")
        data = load_csv(path)
        assert data.n == 2 and data.p == 2 and data.labels is None

    def test_round_trip(self, tmp_path):
        train, test = generate_example1(5, 5, seed=2)
        path = tmp_path / "t.csv"
        write_csv(test, path)
        back = load_csv(path, label_column="label")
        back = relabel_outliers(back, ["R"])
        assert np.allclose(back.features, test.features)
        assert np.array_equal(back.labels, test.labels)
        assert back.class_names == test.class_names


class TestSubsample:
    def _data(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(60, 3))
        labels = np.repeat([1, 2, 3], 20)
        return Dataset(feats, labels, ("a", "b", "c"))

    def test_zero_count_removes_class(self):
        out = subsample_per_class(self._data(), {1: 0, 2: 5, 3: 5}, seed=1)
        assert out.class_names == ("b", "c")
        assert set(np.unique(out.labels)) == {1, 2}

    def test_full_counts_keep_rows(self):
        data = self._data()
        out = subsample_per_class(data, {1: 20, 2: 20, 3: 20}, seed=1)
        assert out.n == 60
        assert sorted(map(tuple, out.features)) == sorted(map(tuple, data.features))

    def test_arithmetic(self):
        out = subsample_per_class(self._data(), {1: 10, 2: 10, 3: 10}, seed=1)
        assert out.n == 30

    def test_insufficient_names_class(self):
        with pytest.raises(DataError, match="class b"):
            subsample_per_class(self._data(), {2: 21}, seed=1)

    def test_absent_class_dropped(self):
        out = subsample_per_class(self._data(), {2: 4}, seed=1)
        assert out.class_names == ("b",)
        assert (out.labels == 1).all()


class TestMulticlass:
    def test_counts_and_labels(self):
        train, test = generate_multiclass(
            3, 2, p=6, scale=3.0, train_counts=[10, 20, 30], test_counts=[5, 5, 5, 7, 7], seed=0
        )
        assert train.n == 60 and test.n == 29
        assert set(np.unique(train.labels)) == {1, 2, 3}
        assert (test.labels == OUTLIER_LABEL).sum() == 14

    def test_needs_enough_dims(self):
        with pytest.raises(ConfigError):
            generate_multiclass(3, 2, p=4, scale=1.0, train_counts=[1] * 3, test_counts=[1] * 5, seed=0)
