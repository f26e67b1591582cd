"""Tests for splitting, confusion statistics and method comparison."""

import numpy as np
import pytest
from scipy import stats

from conftest import make_trials
from ecog_workbench.core.evaluation import (
    ConfusionReport,
    aggregate_report,
    binomial_chance_test,
    chronological_split,
    confusion_matrix,
    merge_classes,
    pair_marker,
    pearson_r,
    per_day_comparison,
    read_confusion_csv,
    significance_stars,
    wilcoxon_ranksum,
    write_confusion_csv,
)
from ecog_workbench.errors import DataError


def _trials(n, bad=()):
    samples = np.zeros((n, 2, 900))
    labels = [1 + i % 2 for i in range(n)]
    return make_trials(samples, labels, [i in bad for i in range(n)])


class TestSplit:

    def test_hundred_trials(self):
        split = chronological_split(_trials(100))
        assert (len(split.train), len(split.validation), len(split.test)) == (64, 16, 20)
        assert split.train[-1] + 1 == split.validation[0]

    def test_ten_trials(self):
        split = chronological_split(_trials(10))
        assert split.train == list(range(6))
        assert split.validation == [6, 7]
        assert split.test == [8, 9]

    def test_bad_trials_dropped_outside_test(self):
        split = chronological_split(_trials(10, bad={0, 7, 9}))
        assert 0 not in split.train
        assert split.validation == [6]
        assert split.test == [8, 9]

    def test_too_few_trials(self):
        with pytest.raises(DataError):
            chronological_split(_trials(4))

    def test_partition_emptied_by_bad_trials(self):
        with pytest.raises(DataError):
            chronological_split(_trials(10, bad={6, 7}))

    def test_select(self):
        trials = _trials(10)
        train, validation, test = chronological_split(trials).select(trials)
        assert test[0] is trials[8]
        assert len(train) + len(validation) + len(test) == 10


class TestConfusion:

    def test_reference_matrix(self):
        report = confusion_matrix([1, 1, 2, 2], [1, 2, 2, 2], 2)
        np.testing.assert_array_equal(report.counts, [[1, 1], [0, 2]])
        assert report.overall_da == 0.75
        assert report.precision[0] == 0.5
        assert report.sensitivity[1] == pytest.approx(2 / 3)
        np.testing.assert_allclose(report.per_class_da, [0.25, 0.5])

    def test_identities_on_random_pairs(self):
        rng = np.random.default_rng(51)
        actual = rng.integers(1, 4, size=1000)
        predicted = rng.integers(1, 4, size=1000)
        report = confusion_matrix(actual, predicted, 3)
        assert report.total == 1000
        assert report.per_class_da.sum() == pytest.approx(report.overall_da)
        assert report.overall_da == pytest.approx(np.mean(actual == predicted))
        assert report.cell_fractions.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(report.column_fractions.sum(axis=0), 1.0)

    def test_empty_row_gives_nan(self):
        report = ConfusionReport(np.array([[0, 0], [1, 3]]))
        assert np.isnan(report.precision[0])
        assert report.sensitivity[0] == 0.0

    def test_empty_report(self):
        assert np.isnan(ConfusionReport(np.zeros((2, 2))).overall_da)

    def test_labels_out_of_range(self):
        with pytest.raises(DataError):
            confusion_matrix([1, 3], [1, 1], 2)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion_matrix([1, 2], [1], 2)

    def test_pooling(self):
        a = ConfusionReport(np.array([[1, 0], [0, 1]]))
        b = ConfusionReport(np.array([[0, 2], [1, 0]]))
        np.testing.assert_array_equal((a + b).counts, [[1, 2], [1, 1]])

    def test_merge_classes(self):
        report = ConfusionReport(np.array([[5, 1, 0], [2, 4, 3], [0, 1, 6]]))
        merged = merge_classes(report, [[1], [2, 3]])
        np.testing.assert_array_equal(merged.counts, [[5, 1], [2, 14]])
        assert merged.total == report.total

    def test_merge_requires_partition(self):
        with pytest.raises(DataError):
            merge_classes(ConfusionReport(np.eye(3, dtype=int)), [[1], [2]])

    def test_csv_round_trip(self, tmp_path):
        report = ConfusionReport(np.array([[0, 0], [2, 3]]))
        path = tmp_path / "day01_confusion.csv"
        write_confusion_csv(report, path)
        text = path.read_text()
        assert "NA" in text
        assert "overall_DA,0.600000" in text
        np.testing.assert_array_equal(read_confusion_csv(path).counts, report.counts)


class TestRankSum:

    def test_separated_triples(self):
        result = wilcoxon_ranksum([1, 2, 3], [4, 5, 6])
        assert result.method == "exact"
        assert result.p_value == pytest.approx(0.10)
        assert result.u_statistic == 0.0

    def test_exact_matches_normal_approximation(self):
        a = [0.61, 0.55, 0.72, 0.58, 0.66, 0.70]
        b = [0.52, 0.63, 0.49, 0.57, 0.54, 0.60]
        exact = wilcoxon_ranksum(a, b, method="exact").p_value
        normal = wilcoxon_ranksum(a, b, method="normal").p_value
        assert abs(exact - normal) < 0.02

    def test_matches_scipy_normal(self):
        rng = np.random.default_rng(52)
        a, b = rng.normal(size=15), rng.normal(0.5, size=15)
        expected = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic").pvalue
        assert wilcoxon_ranksum(a, b).p_value == pytest.approx(expected, rel=1e-9)

    def test_identical_samples(self):
        assert wilcoxon_ranksum([0.5, 0.6, 0.7], [0.5, 0.6, 0.7]).p_value == pytest.approx(1.0)

    def test_shifted_days_significant(self):
        rng = np.random.default_rng(53)
        base = rng.uniform(0.5, 0.7, size=15)
        shifted = base + 0.2
        p = per_day_comparison(shifted, base).p_value
        assert p < 0.01

    def test_exact_rejects_ties(self):
        with pytest.raises(DataError):
            wilcoxon_ranksum([1, 2], [2, 3], method="exact")

    def test_empty_sample(self):
        with pytest.raises(DataError):
            wilcoxon_ranksum([], [1.0])


class TestComparison:

    def test_stars(self):
        assert significance_stars(0.0005) == "***"
        assert significance_stars(0.005) == "**"
        assert significance_stars(0.03) == "*"
        assert significance_stars(0.2) == ""
        assert significance_stars(None) == ""

    def test_pearson_extremes(self):
        assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
        assert pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        assert np.isnan(pearson_r([1, 1, 1], [1, 2, 3]))

    def test_unequal_days(self):
        with pytest.raises(DataError):
            per_day_comparison([0.5, 0.6], [0.5])

    def test_binomial_chance(self):
        assert binomial_chance_test(10, 10, 0.5) == pytest.approx(0.5 ** 10)
        assert binomial_chance_test(5, 10, 0.5) > 0.5
        assert np.isnan(binomial_chance_test(0, 0, 0.5))

    def test_pair_markers(self):
        assert pair_marker("rlda", "fbcsp") == pair_marker("fbcsp", "rlda")
        assert pair_marker("rlda", "unknown") == "?"


def _reports(rng, n_days, n_classes=2, trials=20):
    return {
        day: confusion_matrix(rng.integers(1, n_classes + 1, trials), rng.integers(1, n_classes + 1, trials), n_classes)
        for day in range(1, n_days + 1)
    }


class TestAggregate:

    def test_single_day_pooled_equals_day(self):
        report = ConfusionReport(np.array([[4, 1], [2, 5]]))
        summary = aggregate_report({"rlda": {3: report}})
        entry = summary.methods["rlda"]
        assert entry["pooled"]["counts"] == report.counts.tolist()
        assert entry["mean_da"] == report.overall_da
        assert entry["days"] == [3]

    def test_identical_methods_not_significant(self):
        days = _reports(np.random.default_rng(54), 6)
        summary = aggregate_report({"rlda": days, "fbcsp": dict(days)})
        comparison = summary.comparisons["rlda_vs_fbcsp"]
        assert comparison["da"]["p_value"] == pytest.approx(1.0)
        assert comparison["da"]["stars"] == ""
        assert all(cell["marker"] == "" for row in comparison["cells"] for cell in row)

    def test_missing_days_are_reported(self):
        rng = np.random.default_rng(55)
        a = _reports(rng, 4)
        b = {day: report for day, report in _reports(rng, 4).items() if day != 2}
        comparison = aggregate_report({"rlda": a, "convnet": b}).comparisons["rlda_vs_convnet"]
        assert comparison["missing_days"] == [2]
        assert comparison["days"] == [1, 3, 4]

    def test_chance_level_in_output(self):
        summary = aggregate_report({"rlda": _reports(np.random.default_rng(56), 2, n_classes=3)})
        data = summary.to_dict()
        assert data["n_classes"] == 3
        assert data["chance_level"] == pytest.approx(1 / 3)

    def test_mixed_class_counts(self):
        rng = np.random.default_rng(57)
        with pytest.raises(DataError):
            aggregate_report({"rlda": _reports(rng, 2, 2), "fbcsp": _reports(rng, 2, 3)})

    def test_method_without_days(self):
        with pytest.raises(DataError):
            aggregate_report({"rlda": _reports(np.random.default_rng(58), 2), "fbcsp": {}})

    def test_three_class_merged_report(self):
        days = _reports(np.random.default_rng(59), 3, n_classes=3)
        entry = aggregate_report({"convnet": days}).methods["convnet"]
        pooled = ConfusionReport(sum(report.counts for report in days.values()))
        assert entry["merged"]["groups"] == [[1], [2, 3]]
        assert entry["merged"]["pooled"]["counts"] == merge_classes(pooled, [[1], [2, 3]]).counts.tolist()
        assert entry["merged"]["da"]["2"] == merge_classes(days[2], [[1], [2, 3]]).overall_da
        assert entry["pooled"]["column_fractions"] == pooled.column_fractions.tolist()

    def test_two_class_has_no_merged_report(self):
        entry = aggregate_report({"rlda": _reports(np.random.default_rng(60), 2)}).methods["rlda"]
        assert "merged" not in entry

    def test_best_class_of_pooled_matrix(self):
        days = {
            1: ConfusionReport(np.array([[9, 1, 0], [3, 5, 2], [2, 3, 5]])),
            2: ConfusionReport(np.array([[8, 2, 0], [2, 6, 2], [1, 4, 5]])),
        }
        entry = aggregate_report({"rlda": days}).methods["rlda"]
        assert entry["best_class"] == 1
        assert entry["per_day"]["1"]["best_class"] == 1

    def test_precision_and_sensitivity_compared_across_methods(self):
        strong = {k + 1: ConfusionReport(np.array([[10 + k, 0], [5, 5]])) for k in range(6)}
        weak = {k + 1: ConfusionReport(np.array([[2 + k, 10], [5, 5]])) for k in range(6)}
        comparison = aggregate_report({"rlda": strong, "fbcsp": weak}).comparisons["rlda_vs_fbcsp"]

        assert comparison["precision"][0]["p_value"] < 0.01
        assert comparison["precision"][0]["marker"] == "#"
        assert comparison["sensitivity"][0]["stars"] == "**"
        assert comparison["sensitivity"][0]["marker"] == "#"
        assert comparison["precision"][1]["p_value"] == pytest.approx(1.0)
        assert comparison["precision"][1]["marker"] == ""

    def test_undefined_precision_days_are_skipped(self):
        a = {day: ConfusionReport(np.array([[3 + day, 1], [0, 0]])) for day in (1, 2, 3)}
        b = {day: ConfusionReport(np.array([[2, 2 + day], [0, 0]])) for day in (1, 2, 3)}
        comparison = aggregate_report({"rlda": a, "convnet": b}).comparisons["rlda_vs_convnet"]
        assert comparison["precision"][1] is None
        assert comparison["precision"][0] is not None


class TestBestClass:

    def test_highest_row_accuracy(self):
        assert ConfusionReport(np.array([[2, 8], [1, 9]])).best_class == 2

    def test_empty_report(self):
        assert ConfusionReport(np.zeros((3, 3), dtype=int)).best_class is None
