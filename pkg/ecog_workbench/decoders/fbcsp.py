"""
FBCSP Decoder

Filter bank common spatial patterns:
- every class-trial is band-passed through each band of the filter bank
- per band, CSP spatial filters come from the generalized eigenproblem
  S_A w = l (S_A + S_B) w on trace-normalized class covariances
- log-variances of the spatially filtered signals form the feature vector
- an rLDA classifier decides; three classes use one-vs-rest CSP problems and
  the class whose own classifier gives it the highest posterior wins

The number of filter pairs m and the classifier shrinkage are chosen on the
validation split.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from ..config import DEFAULT_FBCSP_CONFIG, FS_HZ, FbcspConfig
from ..core.dataset_model import ClassTrial
from ..core.preprocess import BiquadCascade, design_bandpass, filter_array
from ..errors import ConfigError, DataError, NumericError, RankDeficiencyWarning
from .rlda import RldaModel, fit_lda_features, predict_proba_rlda

logger = logging.getLogger(__name__)

TrialLike = Union[ClassTrial, np.ndarray]

# Ridge added to rank-deficient composite covariances, relative to their trace
RANK_REGULARIZATION = 1e-9


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Band-pass filters (highpass + lowpass Butterworth per band)"""
    bands: Tuple[Tuple[float, float], ...]
    filter_order: int = 2
    fs_hz: float = FS_HZ

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple((float(lo), float(hi)) for lo, hi in self.bands))
        cascades = tuple(design_bandpass(lo, hi, self.filter_order, self.fs_hz) for lo, hi in self.bands)
        object.__setattr__(self, "_cascades", cascades)

    @classmethod
    def from_config(cls, cfg: FbcspConfig, fs_hz: float = FS_HZ) -> "FilterBank":
        cfg.validate(fs_hz)
        return cls(bands=cfg.bands, filter_order=cfg.filter_order, fs_hz=fs_hz)

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def cascades(self) -> Tuple[BiquadCascade, ...]:
        return self._cascades

    def filter_band(self, samples: np.ndarray, band: int) -> np.ndarray:
        """Band-pass along the last axis (causal, zero initial state)"""
        return filter_array(samples, self._cascades[band])


def _samples(trial: TrialLike) -> np.ndarray:
    return trial.samples if isinstance(trial, ClassTrial) else np.asarray(trial, dtype=np.float64)


def _trial_covariances(samples: np.ndarray) -> np.ndarray:
    """Per-trial channel covariance (population, row-centred) of [n][C][L]"""
    centred = samples - samples.mean(axis=-1, keepdims=True)
    return np.einsum("ncl,ndl->ncd", centred, centred) / samples.shape[-1]


def _class_covariance(covariances: np.ndarray) -> np.ndarray:
    traces = np.trace(covariances, axis1=1, axis2=2)
    traces = np.where(traces > 0, traces, 1.0)
    return np.mean(covariances / traces[:, None, None], axis=0)


def _csp_decomposition(cov_a: np.ndarray, cov_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    All CSP filters of one class pair

    Returns:
        (eigenvalues, filters) sorted by eigenvalue, largest first; filters
        are rows normalized so that W (S_A + S_B) W' = I
    """
    composite = cov_a + cov_b
    spectrum = linalg.eigvalsh(composite)
    if spectrum[-1] <= 0:
        raise NumericError("composite class covariance is zero")
    if spectrum[0] <= 1e-10 * spectrum[-1]:
        ridge = RANK_REGULARIZATION * np.trace(composite) * np.eye(composite.shape[0])
        warnings.warn(
            f"rank-deficient composite covariance regularized with {RANK_REGULARIZATION:g}*trace*I",
            RankDeficiencyWarning,
            stacklevel=3,
        )
        logger.debug("[FBCSP] regularizing rank-deficient composite covariance")
        cov_a = cov_a + ridge / 2.0
        cov_b = cov_b + ridge / 2.0
        composite = cov_a + cov_b

    eigenvalues, eigenvectors = linalg.eigh(cov_a, composite)
    order = np.argsort(eigenvalues, kind="stable")[::-1]
    return eigenvalues[order], eigenvectors[:, order].T


def _select_pairs(filters: np.ndarray, m: int) -> np.ndarray:
    if 2 * m > filters.shape[0]:
        raise ConfigError(f"{m} CSP filter pairs need at least {2 * m} channels (got {filters.shape[0]})")
    return np.vstack([filters[:m], filters[-m:]])


def fit_csp(trials_a: Sequence[TrialLike], trials_b: Sequence[TrialLike], m: int = 3) -> np.ndarray:
    """
    CSP spatial filters for two classes of (already band-limited) trials

    Args:
        trials_a: Trials of class A ([channel][time] each)
        trials_b: Trials of class B
        m: Number of filter pairs

    Returns:
        W of shape [2m][n_channels]; the first m rows maximize the variance
        share of class A, the last m rows that of class B

    Raises:
        DataError: If a class has fewer than 2 trials
    """
    if len(trials_a) < 2 or len(trials_b) < 2:
        raise DataError(f"CSP needs >= 2 trials per class (got {len(trials_a)}, {len(trials_b)})")
    cov_a = _class_covariance(_trial_covariances(np.stack([_samples(t) for t in trials_a])))
    cov_b = _class_covariance(_trial_covariances(np.stack([_samples(t) for t in trials_b])))
    _, filters = _csp_decomposition(cov_a, cov_b)
    return _select_pairs(filters, m)


def logvar_features(
    trial: TrialLike,
    filters: Sequence[np.ndarray],
    bank: FilterBank,
    variance_floor: float = DEFAULT_FBCSP_CONFIG.variance_floor,
) -> np.ndarray:
    """
    Log-variance of the spatially filtered signal in every band

    Args:
        trial: Class-trial or [channel][time] array
        filters: One W per band
        bank: Filter bank the filters were fitted on
        variance_floor: Lower bound applied before the log

    Returns:
        Vector of n_bands * 2m features, band-major
    """
    if len(filters) != bank.n_bands:
        raise DataError(f"{len(filters)} filter sets for {bank.n_bands} bands")
    samples = _samples(trial)
    features = []
    for band, w in enumerate(filters):
        projected = w @ bank.filter_band(samples, band)
        features.append(np.log(np.maximum(projected.var(axis=1), variance_floor)))
    return np.concatenate(features)


def _logvar_from_covariances(covariances: np.ndarray, w: np.ndarray, floor: float) -> np.ndarray:
    variances = np.einsum("kc,ncd,kd->nk", w, covariances, w)
    return np.log(np.maximum(variances, floor))


# ============================================================================
# Model
# ============================================================================

@dataclass(frozen=True, eq=False)
class CspModel:
    """
    Fitted FBCSP decoder

    filters[p][b] is the W matrix of binary problem p in band b. Two-class
    models hold one problem (label 1 vs label 2); three-class models hold one
    problem per class (class k vs rest).
    """
    bank: FilterBank
    n_pairs: int
    filters: Tuple[Tuple[np.ndarray, ...], ...]
    classifiers: Tuple[RldaModel, ...]
    classes: Tuple[int, ...]
    variance_floor: float = DEFAULT_FBCSP_CONFIG.variance_floor

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def one_vs_rest(self) -> bool:
        return len(self.classifiers) > 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bands": [list(band) for band in self.bank.bands],
            "filter_order": self.bank.filter_order,
            "fs_hz": self.bank.fs_hz,
            "n_pairs": self.n_pairs,
            "classes": list(self.classes),
            "variance_floor": self.variance_floor,
            "filters": [[w.tolist() for w in problem] for problem in self.filters],
            "classifiers": [model.to_dict() for model in self.classifiers],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CspModel":
        try:
            bank = FilterBank(
                bands=tuple(tuple(band) for band in data["bands"]),
                filter_order=int(data["filter_order"]),
                fs_hz=float(data["fs_hz"]),
            )
            return cls(
                bank=bank,
                n_pairs=int(data["n_pairs"]),
                filters=tuple(
                    tuple(np.array(w, dtype=np.float64) for w in problem) for problem in data["filters"]
                ),
                classifiers=tuple(RldaModel.from_dict(entry) for entry in data["classifiers"]),
                classes=tuple(int(c) for c in data["classes"]),
                variance_floor=float(data["variance_floor"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed FBCSP model: {e}") from e


def _problem_labels(labels: np.ndarray, positive: Optional[int]) -> np.ndarray:
    """Binary labels of one problem: 1 for the positive class, 2 for the rest"""
    if positive is None:
        return labels
    return np.where(labels == positive, 1, 2)


def _combine_scores(posteriors: List[np.ndarray], one_vs_rest: bool) -> np.ndarray:
    if not one_vs_rest:
        return posteriors[0]
    return np.column_stack([p[:, 0] for p in posteriors])


def _band_covariances(trials: Sequence[ClassTrial], bank: FilterBank) -> np.ndarray:
    """Covariances [band][trial][C][C] of the band-passed trials"""
    samples = np.stack([trial.samples for trial in trials])
    return np.stack([_trial_covariances(bank.filter_band(samples, band)) for band in range(bank.n_bands)])


def _features(covariances: np.ndarray, problem_filters: Sequence[np.ndarray], floor: float) -> np.ndarray:
    return np.hstack([
        _logvar_from_covariances(covariances[band], w, floor) for band, w in enumerate(problem_filters)
    ])


def fit_fbcsp(
    train: Sequence[ClassTrial],
    validation: Sequence[ClassTrial],
    n_classes: int,
    cfg: FbcspConfig = DEFAULT_FBCSP_CONFIG,
    fs_hz: float = FS_HZ,
) -> CspModel:
    """
    Fit FBCSP with validation-based choice of m and shrinkage

    Args:
        train: Cleaned training class-trials
        validation: Cleaned validation class-trials
        n_classes: 2 (single CSP problem) or 3 (one-vs-rest)
        cfg: FBCSP configuration
        fs_hz: Sampling rate of the trials

    Returns:
        CspModel

    Raises:
        DataError: If a class has fewer than 2 training trials
        NumericError: If no hyperparameter candidate can be fitted
    """
    if n_classes not in (2, 3):
        raise ConfigError(f"n_classes must be 2 or 3 (got {n_classes})")
    if not train or not validation:
        raise DataError("FBCSP needs non-empty training and validation trials")

    bank = FilterBank.from_config(cfg, fs_hz)
    train_y = np.array([t.label for t in train], dtype=int)
    val_y = np.array([t.label for t in validation], dtype=int)
    classes = tuple(range(1, n_classes + 1))
    for label in classes:
        if np.sum(train_y == label) < 2:
            raise DataError(f"class {label} has fewer than 2 training trials")

    positives: List[Optional[int]] = [None] if n_classes == 2 else list(classes)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficiencyWarning)
        train_cov = _band_covariances(train, bank)
        val_cov = _band_covariances(validation, bank)

        # Full CSP decomposition per problem and band, subset by m below
        decompositions = []
        for positive in positives:
            binary = _problem_labels(train_y, positive)
            per_band = []
            for band in range(bank.n_bands):
                cov_a = _class_covariance(train_cov[band][binary == 1])
                cov_b = _class_covariance(train_cov[band][binary == 2])
                per_band.append(_csp_decomposition(cov_a, cov_b)[1])
            decompositions.append(per_band)

    n_regularized = sum(1 for w in caught if issubclass(w.category, RankDeficiencyWarning))
    if n_regularized:
        logger.warning(f"[FBCSP] regularized {n_regularized} rank-deficient composite covariances")

    best: Optional[Tuple[float, int, float, Tuple, Tuple]] = None
    for m in sorted(set(cfg.m_candidates)):
        filters = tuple(tuple(_select_pairs(w, m) for w in per_band) for per_band in decompositions)
        train_x = [_features(train_cov, f, cfg.variance_floor) for f in filters]
        val_x = [_features(val_cov, f, cfg.variance_floor) for f in filters]

        for lam in sorted(set(float(v) for v in cfg.lambda_grid)):
            try:
                models = tuple(
                    fit_lda_features(x, _problem_labels(train_y, positive), lam)
                    for x, positive in zip(train_x, positives)
                )
            except NumericError as e:
                logger.debug(f"[FBCSP] m={m} lambda={lam} skipped: {e}")
                continue
            scores = _combine_scores(
                [predict_proba_rlda(model, x) for model, x in zip(models, val_x)], n_classes == 3
            )
            accuracy = float(np.mean(np.asarray(classes)[np.argmax(scores, axis=1)] == val_y))
            if best is None or accuracy > best[0]:
                best = (accuracy, m, lam, filters, models)

    if best is None:
        raise NumericError("no FBCSP hyperparameter candidate could be fitted")

    accuracy, m, lam, filters, models = best
    logger.info(f"[FBCSP] selected m={m}, lambda={lam} (validation DA {accuracy:.3f})")
    return CspModel(
        bank=bank,
        n_pairs=m,
        filters=filters,
        classifiers=models,
        classes=classes,
        variance_floor=cfg.variance_floor,
    )


def predict_fbcsp(model: CspModel, trial: TrialLike) -> Tuple[int, np.ndarray]:
    """
    Classify one class-trial

    Returns:
        (label, per-class scores); scores are class posteriors, or for
        one-vs-rest models the posterior of each class under its own problem
    """
    labels, scores = predict_fbcsp_batch(model, [trial])
    return int(labels[0]), scores[0]


def predict_fbcsp_batch(model: CspModel, trials: Sequence[TrialLike]) -> Tuple[np.ndarray, np.ndarray]:
    """Labels (ties to the lowest class id) and scores for a list of trials"""
    samples = np.stack([_samples(t) for t in trials])
    covariances = np.stack([
        _trial_covariances(model.bank.filter_band(samples, band)) for band in range(model.bank.n_bands)
    ])
    posteriors = [
        predict_proba_rlda(classifier, _features(covariances, problem, model.variance_floor))
        for classifier, problem in zip(model.classifiers, model.filters)
    ]
    scores = _combine_scores(posteriors, model.one_vs_rest)
    labels = np.asarray(model.classes)[np.argmax(scores, axis=1)]
    return labels, scores
