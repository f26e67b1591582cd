"""
Evaluation

Splitting, confusion statistics and cross-method comparison:
- chronological 64/16/20 split with bad-trial removal from train/validation
- confusion matrices with per-class DA, precision (row) and sensitivity (column)
- Wilcoxon rank-sum test (exact for small tie-free samples, normal otherwise)
- per-day method comparison, chance-level binomial tests and the pooled
  multi-day summary
"""

import csv
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ..config import (
    CHANCE_LEVELS,
    MERGED_RESPONSE_GROUPS,
    PAIR_MARKERS,
    SIGNIFICANCE_LEVELS,
    SPLIT_RATIOS,
)
from ..errors import DataError
from ..utils.io_utils import format_float, write_csv_rows, write_json
from .dataset_model import ClassTrial

logger = logging.getLogger(__name__)

# Largest combined sample size handled by exact enumeration
EXACT_RANKSUM_MAX_N = 12


# ============================================================================
# Splitting
# ============================================================================

@dataclass
class Split:
    """Index lists into the chronologically ordered class-trials"""
    train: List[int]
    validation: List[int]
    test: List[int]

    def select(self, trials: Sequence[ClassTrial]) -> Tuple[List[ClassTrial], List[ClassTrial], List[ClassTrial]]:
        return (
            [trials[i] for i in self.train],
            [trials[i] for i in self.validation],
            [trials[i] for i in self.test],
        )


def chronological_split(
    class_trials: Sequence[ClassTrial],
    ratios: Tuple[float, float, float] = SPLIT_RATIOS,
) -> Split:
    """
    Split at floor(r_train * N) and floor((r_train + r_val) * N)

    Bad trials are dropped from train and validation and kept in test.

    Args:
        class_trials: Class-trials in chronological order
        ratios: Train, validation and test fractions

    Returns:
        Split

    Raises:
        DataError: If fewer than 5 trials are given or a partition ends up empty
    """
    n = len(class_trials)
    if n < 5:
        raise DataError(f"need at least 5 class-trials to split (got {n})")
    # Small epsilon keeps e.g. 0.64 * 25 from landing just below an integer
    first = int(math.floor(ratios[0] * n + 1e-9))
    second = int(math.floor((ratios[0] + ratios[1]) * n + 1e-9))

    train = [i for i in range(first) if not class_trials[i].bad]
    validation = [i for i in range(first, second) if not class_trials[i].bad]
    test = list(range(second, n))

    for name, part in (("train", train), ("validation", validation), ("test", test)):
        if not part:
            raise DataError(f"{name} partition is empty after removing bad trials")
    dropped = (first - len(train)) + (second - first - len(validation))
    if dropped:
        logger.info(f"[Evaluation] dropped {dropped} bad trials from train/validation")
    return Split(train=train, validation=validation, test=test)


# ============================================================================
# Confusion Statistics
# ============================================================================

def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    numerator = np.asarray(numerator, dtype=np.float64)
    denominator = np.asarray(denominator, dtype=np.float64)
    out = np.full(np.broadcast(numerator, denominator).shape, np.nan)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


@dataclass(frozen=True, eq=False)
class ConfusionReport:
    """
    Confusion counts D[r][c] (rows actual, columns predicted) and the
    derived statistics

    precision is row-normalized (over the actual class) and sensitivity is
    column-normalized (over the predicted class). Undefined ratios are NaN.
    """
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"confusion counts must be square (got shape {counts.shape})")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def per_class_da(self) -> np.ndarray:
        """D_ii / N; sums to the overall DA"""
        return _ratio(np.diag(self.counts), np.full(self.n_classes, self.total))

    @property
    def overall_da(self) -> float:
        return float(_ratio(np.trace(self.counts), self.total))

    @property
    def precision(self) -> np.ndarray:
        """D_rr / sum_c D_rc"""
        return _ratio(np.diag(self.counts), self.counts.sum(axis=1))

    @property
    def sensitivity(self) -> np.ndarray:
        """D_cc / sum_r D_rc"""
        return _ratio(np.diag(self.counts), self.counts.sum(axis=0))

    @property
    def cell_fractions(self) -> np.ndarray:
        return _ratio(self.counts, np.full(self.counts.shape, self.total))

    @property
    def column_fractions(self) -> np.ndarray:
        return _ratio(self.counts, np.broadcast_to(self.counts.sum(axis=0), self.counts.shape))

    @property
    def best_class(self) -> Optional[int]:
        """1-based class with the highest row-normalized accuracy (None if no class has trials)"""
        precision = self.precision
        if not np.any(np.isfinite(precision)):
            return None
        return int(np.nanargmax(precision)) + 1

    def __add__(self, other: "ConfusionReport") -> "ConfusionReport":
        if other.n_classes != self.n_classes:
            raise DataError("cannot pool confusion reports with different class counts")
        return ConfusionReport(self.counts + other.counts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "counts": self.counts.tolist(),
            "n_classes": self.n_classes,
            "total": self.total,
            "overall_da": self.overall_da,
            "per_class_da": self.per_class_da.tolist(),
            "precision": self.precision.tolist(),
            "sensitivity": self.sensitivity.tolist(),
            "column_fractions": self.column_fractions.tolist(),
            "best_class": self.best_class,
        }


def confusion_matrix(actual: Sequence[int], predicted: Sequence[int], n_classes: int) -> ConfusionReport:
    """
    Count (actual, predicted) label pairs

    Args:
        actual: True labels in 1..n_classes
        predicted: Predicted labels in 1..n_classes
        n_classes: Number of classes

    Returns:
        ConfusionReport

    Raises:
        DataError: On length mismatch or labels out of range
    """
    actual = np.asarray(actual, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if actual.shape != predicted.shape:
        raise DataError(f"{actual.size} actual labels but {predicted.size} predictions")
    for name, labels in (("actual", actual), ("predicted", predicted)):
        if labels.size and (labels.min() < 1 or labels.max() > n_classes):
            raise DataError(f"{name} label outside 1..{n_classes}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (actual - 1, predicted - 1), 1)
    return ConfusionReport(counts)


def merge_classes(report: ConfusionReport, groups: Sequence[Sequence[int]]) -> ConfusionReport:
    """
    Merge classes into groups and recount

    Args:
        report: Source report
        groups: Partition of 1..n_classes, e.g. [[1], [2, 3]]

    Returns:
        ConfusionReport over the groups, in the given order
    """
    members = sorted(label for group in groups for label in group)
    if members != list(range(1, report.n_classes + 1)):
        raise DataError(f"groups {groups} do not partition classes 1..{report.n_classes}")
    index = [np.asarray(group, dtype=int) - 1 for group in groups]
    counts = np.array([[report.counts[np.ix_(rows, cols)].sum() for cols in index] for rows in index])
    return ConfusionReport(counts)


def write_confusion_csv(report: ConfusionReport, path: Union[str, Path]) -> None:
    """
    Write counts with precision per row, sensitivity per column and overall DA

    Undefined ratios are written as NA.
    """
    names = [f"class_{i}" for i in range(1, report.n_classes + 1)]
    rows = [
        [names[r], *report.counts[r].tolist(), format_float(report.precision[r])]
        for r in range(report.n_classes)
    ]
    rows.append(["sensitivity", *[format_float(v) for v in report.sensitivity], ""])
    rows.append(["overall_DA", format_float(report.overall_da)])
    write_csv_rows(path, ["actual\\predicted", *names, "precision"], rows)


def read_confusion_csv(path: Union[str, Path]) -> ConfusionReport:
    """Counts of a confusion CSV written by write_confusion_csv"""
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    try:
        n = len(rows[0]) - 2
        counts = [[int(v) for v in row[1:n + 1]] for row in rows[1:n + 1]]
    except (IndexError, ValueError) as e:
        raise DataError(f"malformed confusion file {path}: {e}") from e
    return ConfusionReport(np.array(counts))


# ============================================================================
# Statistics
# ============================================================================

@dataclass
class RankSumResult:
    u_statistic: float
    p_value: float
    method: str


def _exact_ranksum_p(u: float, n_a: int, n_b: int) -> float:
    n = n_a + n_b
    distribution = np.array([
        sum(ranks) - n_a * (n_a + 1) / 2.0 for ranks in itertools.combinations(range(1, n + 1), n_a)
    ])
    lower = np.mean(distribution <= u + 1e-9)
    upper = np.mean(distribution >= u - 1e-9)
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_ranksum_p(u: float, n_a: int, n_b: int, ranks: np.ndarray) -> float:
    n = n_a + n_b
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = np.sum(tie_counts ** 3 - tie_counts) / (n * (n - 1)) if n > 1 else 0.0
    variance = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if variance <= 0:
        return 1.0
    z = (abs(u - n_a * n_b / 2.0) - 0.5) / math.sqrt(variance)
    return float(min(1.0, 2.0 * stats.norm.sf(z)))


def wilcoxon_ranksum(a: Sequence[float], b: Sequence[float], method: str = "auto") -> RankSumResult:
    """
    Two-sided Wilcoxon rank-sum (Mann-Whitney U) test

    Args:
        a: First sample
        b: Second sample
        method: "exact", "normal" or "auto" (exact when len(a) + len(b) <= 12
                and there are no ties)

    Returns:
        RankSumResult with U of sample a and the two-sided p-value

    Raises:
        DataError: If a sample is empty
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DataError("rank-sum test needs two non-empty samples")

    ranks = stats.rankdata(np.concatenate([a, b]))
    u = float(ranks[:a.size].sum() - a.size * (a.size + 1) / 2.0)
    has_ties = np.unique(ranks).size < ranks.size

    if method == "auto":
        method = "exact" if a.size + b.size <= EXACT_RANKSUM_MAX_N and not has_ties else "normal"
    if method == "exact":
        if has_ties:
            raise DataError("exact rank-sum enumeration requires tie-free samples")
        return RankSumResult(u, _exact_ranksum_p(u, a.size, b.size), "exact")
    if method == "normal":
        return RankSumResult(u, _normal_ranksum_p(u, a.size, b.size, ranks), "normal")
    raise DataError(f"unknown rank-sum method '{method}'")


def significance_stars(p_value: Optional[float]) -> str:
    """*** for p < 0.001, ** for p < 0.01, * for p < 0.05, else empty"""
    if p_value is None or not np.isfinite(p_value):
        return ""
    for threshold, stars in SIGNIFICANCE_LEVELS:
        if p_value < threshold:
            return stars
    return ""


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation; NaN when either input is constant"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(stats.pearsonr(x, y)[0])


@dataclass
class Comparison:
    p_value: float
    stars: str
    pearson_r: float
    u_statistic: float


def per_day_comparison(da_a: Sequence[float], da_b: Sequence[float]) -> Comparison:
    """
    Compare two methods' per-day decoding accuracies

    Args:
        da_a: DA per day of method A
        da_b: DA per day of method B, same day order

    Returns:
        Comparison with the rank-sum p-value, its stars and the paired Pearson r

    Raises:
        DataError: On unequal day counts or fewer than 2 days
    """
    if len(da_a) != len(da_b):
        raise DataError(f"unequal day counts ({len(da_a)} vs {len(da_b)})")
    if len(da_a) < 2:
        raise DataError("per-day comparison needs at least 2 days")
    test = wilcoxon_ranksum(da_a, da_b)
    return Comparison(test.p_value, significance_stars(test.p_value), pearson_r(da_a, da_b), test.u_statistic)


def binomial_chance_test(n_correct: int, n_total: int, chance: float) -> float:
    """One-sided binomial p-value of n_correct / n_total exceeding chance"""
    if n_total <= 0:
        return float("nan")
    return float(stats.binomtest(int(n_correct), int(n_total), chance, alternative="greater").pvalue)


def pair_marker(method_a: str, method_b: str) -> str:
    """Summary marker of a method pair ('?' for pairs without a symbol)"""
    return PAIR_MARKERS.get(tuple(sorted((method_a, method_b))), "?")


# ============================================================================
# Multi-day Summary
# ============================================================================

@dataclass
class AggregateReport:
    """Pooled per-method statistics and pairwise cross-method tests"""
    n_classes: int
    methods: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    comparisons: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    conditions: Dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_classes": self.n_classes,
            "chance_level": CHANCE_LEVELS.get(self.n_classes),
            "conditions": {str(day): value for day, value in sorted(self.conditions.items())},
            "methods": self.methods,
            "comparisons": self.comparisons,
        }


def write_summary_json(report: AggregateReport, path: Union[str, Path]) -> None:
    """Deterministic JSON (sorted keys, NaN as null)"""
    write_json(path, report.to_dict())


def _marked_test(values_a: Sequence[float], values_b: Sequence[float], marker: str) -> Optional[Dict[str, Any]]:
    """Rank-sum test over days where both values are defined; None below 2 such days"""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    defined = np.isfinite(a) & np.isfinite(b)
    if defined.sum() < 2:
        return None
    test = wilcoxon_ranksum(a[defined], b[defined])
    stars = significance_stars(test.p_value)
    return {"p_value": test.p_value, "stars": stars, "marker": marker if stars else ""}


def _method_entry(days: Mapping[int, ConfusionReport], n_classes: int, chance: float) -> Dict[str, Any]:
    ordered = sorted(days)
    pooled = ConfusionReport(sum(days[d].counts for d in ordered))
    entry: Dict[str, Any] = {
        "days": ordered,
        "da": {str(d): days[d].overall_da for d in ordered},
        "mean_da": float(np.mean([days[d].overall_da for d in ordered])),
        "chance_p": {
            str(d): binomial_chance_test(int(np.trace(days[d].counts)), days[d].total, chance) for d in ordered
        },
        "per_day": {str(d): days[d].to_dict() for d in ordered},
        "pooled": pooled.to_dict(),
        "best_class": pooled.best_class,
    }
    if n_classes == 3:
        groups = [list(group) for group in MERGED_RESPONSE_GROUPS]
        merged = {d: merge_classes(days[d], groups) for d in ordered}
        entry["merged"] = {
            "groups": groups,
            "da": {str(d): merged[d].overall_da for d in ordered},
            "pooled": merge_classes(pooled, groups).to_dict(),
        }
    return entry


def aggregate_report(
    per_day: Mapping[str, Mapping[int, ConfusionReport]],
    methods: Optional[Sequence[str]] = None,
    conditions: Optional[Mapping[int, str]] = None,
) -> AggregateReport:
    """
    Pool daily confusion reports and compare methods across days

    Every method pair is compared on per-day DA, on every cell fraction, on
    per-class precision and on per-class sensitivity. Significant entries
    carry the pair's marker. Three-class runs also report the merged
    Response 1 vs Responses 2+3 matrix.

    Args:
        per_day: method -> day_id -> ConfusionReport
        methods: Methods to include, in order (all keys of per_day if None)
        conditions: Optional day_id -> condition label

    Returns:
        AggregateReport

    Raises:
        DataError: If a method has no days or class counts differ
    """
    methods = list(methods) if methods is not None else list(per_day)
    if not methods:
        raise DataError("no methods to aggregate")
    n_classes_set = {report.n_classes for m in methods for report in per_day.get(m, {}).values()}
    if len(n_classes_set) != 1:
        raise DataError(f"reports must share one class count (got {sorted(n_classes_set)})")
    n_classes = n_classes_set.pop()
    chance = CHANCE_LEVELS.get(n_classes, 1.0 / n_classes)

    summary = AggregateReport(n_classes=n_classes, conditions=dict(conditions or {}))
    for method in methods:
        days = per_day.get(method, {})
        if not days:
            raise DataError(f"method '{method}' has no day results")
        summary.methods[method] = _method_entry(days, n_classes, chance)

    for method_a, method_b in itertools.combinations(methods, 2):
        days_a, days_b = per_day[method_a], per_day[method_b]
        common = sorted(set(days_a) & set(days_b))
        missing = sorted(set(days_a) ^ set(days_b))
        if missing:
            logger.warning(
                f"[Evaluation] {method_a} vs {method_b}: comparing {len(common)} shared days "
                f"(days {missing} missing from one method)"
            )
        marker = pair_marker(method_a, method_b)
        entry: Dict[str, Any] = {
            "methods": [method_a, method_b],
            "marker": marker,
            "days": common,
            "missing_days": missing,
            "da": None,
            "cells": None,
            "precision": None,
            "sensitivity": None,
        }
        if len(common) >= 2:
            comparison = per_day_comparison(
                [days_a[d].overall_da for d in common], [days_b[d].overall_da for d in common]
            )
            entry["da"] = {
                "p_value": comparison.p_value,
                "stars": comparison.stars,
                "pearson_r": comparison.pearson_r,
            }
            entry["cells"] = [
                [
                    _marked_test(
                        [days_a[d].cell_fractions[r, c] for d in common],
                        [days_b[d].cell_fractions[r, c] for d in common],
                        marker,
                    )
                    for c in range(n_classes)
                ]
                for r in range(n_classes)
            ]
            for statistic in ("precision", "sensitivity"):
                entry[statistic] = [
                    _marked_test(
                        [getattr(days_a[d], statistic)[k] for d in common],
                        [getattr(days_b[d], statistic)[k] for d in common],
                        marker,
                    )
                    for k in range(n_classes)
                ]
        summary.comparisons[f"{method_a}_vs_{method_b}"] = entry

    logger.info(f"[Evaluation] aggregated {len(methods)} methods over {len({d for m in methods for d in per_day[m]})} days")
    return summary
