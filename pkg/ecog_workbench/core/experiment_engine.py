"""
Experiment Engine

Runs the decoding pipeline for every (day, method) pair:
- read the day, preprocess (decoding path), keep usable contacts
- epoch into labeled class-trials, flag bad trials, split chronologically
- fit the decoder with validation-based hyperparameter selection
- predict the test split and write the confusion matrix, model and logs

Pairs run in a process pool. Every pair draws its randomness from
(seed, day_id, method), so results do not depend on the worker count or
scheduling. A failing pair is recorded in its DayResult and the other
pairs continue.
"""

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import psutil

from ..config import DAY_DIR_FORMAT, METHODS, ExperimentConfig
from ..decoders import convnet, fbcsp, rlda
from ..errors import ConfigError, DataError, WorkbenchError
from ..utils.io_utils import ensure_directory, format_float, write_csv_rows, write_json
from ..utils.settings import CONFIG_FILE, save_experiment_config
from .dataset_model import ClassTrial, Recording, list_days, read_dataset, read_manifest
from .epoching import ClassScheme, make_class_trials, segment_trials
from .evaluation import (
    AggregateReport,
    ConfusionReport,
    Split,
    aggregate_report,
    chronological_split,
    confusion_matrix,
    write_confusion_csv,
    write_summary_json,
)
from .preprocess import flag_bad_trials, preprocess_recording
from .spectral import SUMMARY_REGIONS, average_aep, average_relative_power, region_means, topographic_map

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
ERRORS_FILE = "errors.json"


@dataclass
class DayResult:
    """Result of decoding one day with one method"""
    success: bool
    day_id: int
    method: str
    condition: Optional[str] = None
    report: Optional[ConfusionReport] = None
    validation_accuracy: Optional[float] = None
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    files: List[str] = field(default_factory=list)
    error: Optional[str] = None
    error_kind: Optional[str] = None
    exit_code: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "success": self.success,
            "day_id": self.day_id,
            "method": self.method,
            "condition": self.condition,
            "overall_da": self.report.overall_da if self.report is not None else None,
            "n_test": self.report.total if self.report is not None else None,
            "validation_accuracy": self.validation_accuracy,
            "hyperparameters": self.hyperparameters,
            "error": self.error,
            "error_kind": self.error_kind,
        }


@dataclass
class PreparedDay:
    """Class-trials of one day, ready for decoding"""
    recording: Recording
    trials: List[ClassTrial]
    split: Split
    noisy_mask: np.ndarray

    @property
    def day_id(self) -> int:
        return self.recording.day_id

    def partitions(self) -> Tuple[List[ClassTrial], List[ClassTrial], List[ClassTrial]]:
        return self.split.select(self.trials)


@dataclass
class ExperimentResult:
    results: List[DayResult]
    summary: Optional[AggregateReport] = None
    output: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        return max((r.exit_code for r in self.results), default=0)

    @property
    def failures(self) -> List[DayResult]:
        return [r for r in self.results if not r.success]


def method_seed(seed: int, day_id: int, method: str) -> int:
    """Deterministic 32-bit seed of one (day, method) pair"""
    index = METHODS.index(method) if method in METHODS else len(METHODS)
    return int(np.random.SeedSequence([seed, day_id, index]).generate_state(1)[0])


def day_file(method_dir: Path, day_id: int, suffix: str) -> Path:
    return method_dir / f"{DAY_DIR_FORMAT.format(day_id=day_id)}_{suffix}"


# ============================================================================
# Per-day pipeline
# ============================================================================

def prepare_day(day_path: Union[str, Path], config: ExperimentConfig) -> PreparedDay:
    """
    Read, preprocess, epoch and split one day

    Args:
        day_path: Day directory
        config: Experiment configuration

    Returns:
        PreparedDay

    Raises:
        DataError: On unreadable data or too few usable trials
    """
    raw = read_dataset(day_path)
    processed = preprocess_recording(raw, config.preprocess, decoding_path=True)
    recording = processed.recording.usable_channels()

    scheme = ClassScheme.for_classes(config.n_classes, config.no_stim_epochs)
    trials = make_class_trials(segment_trials(recording), scheme)
    trials = flag_bad_trials(trials, config.preprocess.amplitude_threshold_uv)
    split = chronological_split(trials)

    n_bad = sum(t.bad for t in trials)
    logger.info(
        f"[ExperimentEngine] day {recording.day_id}: {len(trials)} class-trials "
        f"({n_bad} bad), split {len(split.train)}/{len(split.validation)}/{len(split.test)}"
    )
    return PreparedDay(recording=recording, trials=trials, split=split, noisy_mask=processed.noisy_mask)


def decode_day(
    prepared: PreparedDay,
    method: str,
    config: ExperimentConfig,
    output: Optional[Union[str, Path]] = None,
) -> DayResult:
    """
    Fit one decoder on a prepared day and evaluate it on the test split

    Args:
        prepared: Output of prepare_day
        method: "rlda", "fbcsp" or "convnet"
        config: Experiment configuration
        output: Results root; files go to <output>/<method>/ (nothing written if None)

    Returns:
        Successful DayResult with the test ConfusionReport
    """
    train, validation, test = prepared.partitions()
    fs_hz = prepared.recording.fs_hz
    actual = np.array([t.label for t in test], dtype=int)
    hyperparameters: Dict[str, Any] = {}
    model_payload: Optional[Dict[str, Any]] = None
    convnet_model = None
    training_log = None

    if method == "rlda":
        train_x, train_y = rlda.feature_matrix(train, config.rlda, fs_hz)
        val_x, val_y = rlda.feature_matrix(validation, config.rlda, fs_hz)
        search = rlda.search_lambda_features(train_x, train_y, val_x, val_y, config.rlda.lambda_grid)
        predicted, _ = rlda.predict_rlda_batch(search.model, test, config.rlda, fs_hz)
        validation_accuracy = search.validation_accuracy
        hyperparameters["lambda"] = search.shrinkage_lambda
        model_payload = search.model.to_dict()

    elif method == "fbcsp":
        model = fbcsp.fit_fbcsp(train, validation, config.n_classes, config.fbcsp, fs_hz)
        predicted, _ = fbcsp.predict_fbcsp_batch(model, test)
        val_predicted, _ = fbcsp.predict_fbcsp_batch(model, validation)
        validation_accuracy = float(np.mean(val_predicted == np.array([t.label for t in validation])))
        hyperparameters["m"] = model.n_pairs
        hyperparameters["lambda"] = model.classifiers[0].shrinkage_lambda
        model_payload = model.to_dict()

    elif method == "convnet":
        train_cfg = replace(config.train, seed=method_seed(config.seed, prepared.day_id, method))
        convnet_model, training_log = convnet.train(train, validation, config.architecture, train_cfg, config.n_classes)
        predicted, _ = convnet.predict_convnet(convnet_model, test)
        validation_accuracy = training_log.records[_best_record(training_log)].val_acc
        hyperparameters["best_epoch"] = training_log.best_epoch
        hyperparameters["epochs"] = len(training_log.records)

    else:
        raise ConfigError(f"unknown method '{method}' (choose from {', '.join(METHODS)})")

    report = confusion_matrix(actual, predicted, config.n_classes)
    result = DayResult(
        success=True,
        day_id=prepared.day_id,
        method=method,
        condition=prepared.recording.condition.value,
        report=report,
        validation_accuracy=float(validation_accuracy),
        hyperparameters=hyperparameters,
    )

    if output is not None:
        method_dir = ensure_directory(Path(output) / method)
        confusion_path = day_file(method_dir, prepared.day_id, "confusion.csv")
        write_confusion_csv(report, confusion_path)
        result.files.append(str(confusion_path))
        if model_payload is not None:
            model_path = day_file(method_dir, prepared.day_id, "model.json")
            write_json(model_path, model_payload)
            result.files.append(str(model_path))
        if convnet_model is not None:
            model_path = day_file(method_dir, prepared.day_id, "model.npz")
            convnet_model.save(model_path)
            log_path = day_file(method_dir, prepared.day_id, "training_log.csv")
            training_log.write_csv(log_path)
            result.files.extend([str(model_path), str(log_path)])
        write_json(day_file(method_dir, prepared.day_id, "result.json"), result.to_dict())

    logger.info(
        f"[ExperimentEngine] day {prepared.day_id} {method}: test DA {report.overall_da:.3f} "
        f"({report.total} trials)"
    )
    return result


def _best_record(training_log: convnet.TrainingLog) -> int:
    """Record index of the best phase-1 epoch"""
    return max(training_log.best_epoch - 1, 0)


def _failure(day_id: int, method: str, error: Exception) -> DayResult:
    if isinstance(error, WorkbenchError):
        kind, code = error.kind, error.exit_code
    else:
        kind, code = "internal", 3
        logger.debug("".join(traceback.format_exception(type(error), error, error.__traceback__)))
    logger.error(f"[ExperimentEngine] day {day_id} {method} failed: {kind}: {error}")
    return DayResult(success=False, day_id=day_id, method=method, error=str(error), error_kind=kind, exit_code=code)


def run_day_method(
    day_path: Union[str, Path],
    day_id: int,
    method: str,
    config: ExperimentConfig,
    output: Optional[Union[str, Path]] = None,
) -> DayResult:
    """
    Prepare and decode one (day, method) pair, never raising

    Returns:
        DayResult; failures carry the error kind and exit code
    """
    try:
        prepared = prepare_day(day_path, config)
        return decode_day(prepared, method, config, output)
    except Exception as e:
        return _failure(day_id, method, e)


# ============================================================================
# Engine
# ============================================================================

def default_workers() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


class ExperimentEngine:
    """
    Runs full experiments and single decodes

    Responsibilities:
    - Locate day directories of a dataset
    - Dispatch (day, method) pairs to a process pool
    - Aggregate daily reports and write summary.json, config.json, errors.json
    """

    def __init__(self, config: ExperimentConfig):
        """
        Initialize the engine

        Args:
            config: Validated experiment configuration
        """
        config.validate()
        self.config = config
        self.workers = config.workers or default_workers()

    def _days(self) -> List[Tuple[int, Path]]:
        if not self.config.dataset:
            raise ConfigError("no dataset path given")
        days = []
        for path in list_days(self.config.dataset):
            days.append((int(read_manifest(path)["day_id"]), path))
        if not days:
            raise DataError(f"no day directories found in {self.config.dataset}")
        return days

    def run(self) -> ExperimentResult:
        """
        Decode every day with every configured method and aggregate

        Returns:
            ExperimentResult; exit_code is the worst failure code
        """
        output = ensure_directory(self.config.output)
        save_experiment_config(self.config, output / CONFIG_FILE)
        days = self._days()
        jobs = [(path, day_id, method) for day_id, path in days for method in self.config.methods]
        logger.info(
            f"[ExperimentEngine] {len(days)} days x {len(self.config.methods)} methods "
            f"on {min(self.workers, len(jobs))} workers"
        )

        if self.workers <= 1 or len(jobs) == 1:
            results = [run_day_method(path, day_id, method, self.config, output) for path, day_id, method in jobs]
        else:
            with ProcessPoolExecutor(max_workers=min(self.workers, len(jobs))) as pool:
                futures = [
                    pool.submit(run_day_method, path, day_id, method, self.config, output)
                    for path, day_id, method in jobs
                ]
                results = [future.result() for future in futures]

        results.sort(key=lambda r: (r.day_id, METHODS.index(r.method) if r.method in METHODS else len(METHODS)))
        experiment = ExperimentResult(results=results, output=output)
        experiment.summary = self._summarize(results, output)

        if experiment.failures:
            write_json(output / ERRORS_FILE, [r.to_dict() for r in experiment.failures])
        return experiment

    def _summarize(self, results: Sequence[DayResult], output: Path) -> Optional[AggregateReport]:
        per_day: Dict[str, Dict[int, ConfusionReport]] = {}
        conditions: Dict[int, str] = {}
        for r in results:
            if r.success and r.report is not None:
                per_day.setdefault(r.method, {})[r.day_id] = r.report
                conditions[r.day_id] = r.condition
        methods = [m for m in self.config.methods if m in per_day]
        if not methods:
            logger.error("[ExperimentEngine] no successful results to summarize")
            return None
        summary = aggregate_report(per_day, methods, conditions)
        write_summary_json(summary, output / SUMMARY_FILE)
        return summary

    def decode(self, day_path: Union[str, Path], method: str) -> DayResult:
        """
        Decode a single day with a single method

        Raises:
            WorkbenchError: If the day cannot be prepared or decoded
        """
        output = ensure_directory(self.config.output)
        prepared = prepare_day(day_path, self.config)
        return decode_day(prepared, method, self.config, output)

    def export_spectra(self, day_path: Union[str, Path], output: Optional[Union[str, Path]] = None) -> List[Path]:
        """
        Write relative spectral power, its region means, averaged AEP and
        topography of one day

        The spectral path skips the low-pass stage.

        Returns:
            Paths of the per-channel relSP files, band_power.csv, aep.csv and
            topography.csv
        """
        raw = read_dataset(day_path)
        processed = preprocess_recording(raw, self.config.preprocess, decoding_path=False)
        recording = processed.recording
        usable = recording.usable_channels()
        trials = segment_trials(usable)
        if not trials:
            raise DataError(f"day {recording.day_id} has no stimulus trials")

        relsp = average_relative_power(trials, self.config.spectral)
        aep = average_aep(trials)
        onset = trials[0].trigger_offset
        topography = topographic_map(
            _expand_channels(aep, recording), recording.channels, recording.fs_hz, onset
        )

        out = ensure_directory(output if output is not None else self.config.output)
        prefix = DAY_DIR_FORMAT.format(day_id=recording.day_id)

        written = []
        header = ["freq_hz", *[f"{t:.4f}" for t in relsp.time_axis_s]]
        for ch, channel_map in zip(usable.channels, relsp.values):
            relsp_path = out / f"{prefix}_relsp_ch{ch.index:02d}.csv"
            write_csv_rows(
                relsp_path,
                header,
                [[f"{f:.4f}", *[format_float(v) for v in row]] for f, row in zip(relsp.freq_axis_hz, channel_map)],
            )
            written.append(relsp_path)

        means = region_means(relsp)
        band_path = out / f"{prefix}_band_power.csv"
        write_csv_rows(
            band_path,
            ["region", "low_hz", "high_hz", "start_s", "end_s", "mean_relsp"],
            [[name, *band, *window, format_float(means[name])] for name, (band, window) in SUMMARY_REGIONS.items()],
        )
        written.append(band_path)

        aep_path = out / f"{prefix}_aep.csv"
        times = (np.arange(aep.shape[1]) - onset) / recording.fs_hz
        write_csv_rows(
            aep_path,
            ["channel", *[f"{t:.6f}" for t in times]],
            [[ch.index, *[format_float(v, 4) for v in row]] for ch, row in zip(usable.channels, aep)],
        )

        topography_path = out / f"{prefix}_topography.csv"
        write_csv_rows(
            topography_path,
            ["row", *[f"col_{c}" for c in range(topography.shape[1])]],
            [[r, *[format_float(v, 4) for v in row]] for r, row in enumerate(topography)],
        )

        logger.info(f"[ExperimentEngine] day {recording.day_id}: spectra written to {out}")
        return [*written, aep_path, topography_path]


def _expand_channels(aep: np.ndarray, recording: Recording) -> np.ndarray:
    """Place usable-channel rows back at their full-recording positions (NaN elsewhere)"""
    full = np.full((recording.n_channels, aep.shape[1]), np.nan)
    full[~recording.excluded_mask] = aep
    return full
