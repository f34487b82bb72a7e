import numpy as np
import pytest

from csforest.dataset import OUTLIER_LABEL
from csforest.errors import DataError
from csforest.evaluation import (
    EvalReport,
    aggregate_runs,
    flatten_report,
    read_report_json,
    type_errors,
    write_report_json,
    write_report_long_csv,
)
from csforest.sets import PredictionSets


def sets_of(rows, names=("1", "2")):
    return PredictionSets(np.asarray(rows, dtype=bool), names)


class TestTypeErrors:
    def test_all_exact_singletons(self):
        sets = sets_of([[1, 0], [0, 1], [1, 0]])
        report = type_errors(sets, [1, 2, 1])
        assert report.type1 == 0.0
        assert report.type2 == 0.0
        assert report.per_class["1"].singleton_rate == 1.0

    def test_full_sets(self):
        sets = sets_of([[1, 1], [1, 1], [1, 1]])
        report = type_errors(sets, [1, 2, OUTLIER_LABEL])
        assert report.type1 == 0.0
        assert report.type2 == 1.0
        assert report.per_class["R"].type2_rate == 1.0
        assert report.per_class["R"].empty_rate == 0.0

    def test_counting_by_definition(self):
        # sets ({1}, {1,2}, {}) with truth (1,1,1)
        sets = sets_of([[1, 0], [1, 1], [0, 0]])
        report = type_errors(sets, [1, 1, 1])
        assert report.type1 == pytest.approx(1 / 3)
        assert report.type2 == pytest.approx(1 / 3)
        stats = report.per_class["1"]
        assert stats.singleton_rate == pytest.approx(1 / 3)
        assert stats.multi_rate == pytest.approx(1 / 3)
        assert stats.empty_rate == pytest.approx(1 / 3)
        assert stats.miss_rate == 0.0

    def test_outlier_rejection_is_empty_rate(self):
        sets = sets_of([[0, 0], [1, 0], [0, 0]])
        report = type_errors(sets, [OUTLIER_LABEL] * 3)
        assert report.per_class["R"].empty_rate == pytest.approx(2 / 3)
        assert report.per_class["R"].coverage is None
        assert report.type2 == pytest.approx(1 / 3)
        assert report.n_inliers == 0 and report.type1 == 0.0

    def test_partition_invariant(self):
        rng = np.random.default_rng(0)
        sets = sets_of(rng.integers(0, 2, size=(60, 2)))
        truth = rng.choice([1, 2, OUTLIER_LABEL], size=60)
        report = type_errors(sets, truth)
        for name in ("1", "2"):
            s = report.per_class[name]
            if s.n:
                total = s.singleton_rate + s.multi_rate + s.empty_rate + s.miss_rate
                assert total == pytest.approx(1.0)
                assert s.coverage + s.empty_rate + s.miss_rate == pytest.approx(1.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        member = rng.integers(0, 2, size=(40, 2)).astype(bool)
        truth = rng.choice([1, 2, OUTLIER_LABEL], size=40)
        perm = rng.permutation(40)
        a = type_errors(sets_of(member), truth)
        b = type_errors(sets_of(member[perm]), truth[perm])
        assert flatten_report(a) == flatten_report(b)

    def test_mismatched_lengths(self):
        with pytest.raises(DataError):
            type_errors(sets_of([[1, 0]]), [1, 2])

    def test_empty_class_explicit(self):
        sets = sets_of([[1, 0]])
        report = type_errors(sets, [1])
        assert report.per_class["2"].n == 0
        assert "2.n" in flatten_report(report)


class TestAggregate:
    def _report(self, t1, t2):
        sets = sets_of([[1, 0], [0, 1]])
        base = type_errors(sets, [1, 2])
        return EvalReport(base.class_names, base.per_class, t1, t2, 2, 2)

    def test_single_report_zero_sd(self):
        agg = aggregate_runs([self._report(0.05, 0.2)])
        assert agg["type1"] == (0.05, 0.0)

    def test_two_reports_mean_sd(self):
        agg = aggregate_runs([self._report(0.04, 0.1), self._report(0.06, 0.3)])
        mean, sd = agg["type1"]
        assert mean == pytest.approx(0.05)
        assert sd == pytest.approx(0.0141, abs=1e-4)

    def test_structure_mismatch(self):
        a = type_errors(sets_of([[1, 0]]), [1])
        b = type_errors(sets_of([[1, 0, 0]], names=("1", "2", "3")), [1])
        with pytest.raises(DataError, match="mismatched"):
            aggregate_runs([a, b])


class TestExport:
    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        sets = sets_of(rng.integers(0, 2, size=(30, 2)))
        truth = rng.choice([1, 2, OUTLIER_LABEL], size=30)
        report = type_errors(sets, truth)
        path = tmp_path / "r.json"
        write_report_json(report, path, extra={"method": "crf", "rep": 3})
        back, meta = read_report_json(path)
        assert flatten_report(back) == flatten_report(report)
        assert meta == {"method": "crf", "rep": 3}

    def test_long_csv_layout(self, tmp_path):
        sets = sets_of([[1, 0], [0, 0]])
        report = type_errors(sets, [1, OUTLIER_LABEL])
        path = tmp_path / "r.csv"
        write_report_long_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "class,category,rate"
        assert any(line.startswith("R,empty_rate,") for line in lines)
        assert any(line.startswith("_all,type1,") for line in lines)
        # every class appears even when empty
        assert any(line.startswith("2,n,") for line in lines)
