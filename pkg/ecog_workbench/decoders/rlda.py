"""
rLDA Decoder

Linear discriminant analysis with a shrinkage-regularized covariance shared
by all classes:
- features: per-channel mean amplitude in 40 ms bins (channel-major)
- pooled within-class covariance, shrunk towards (trace/d)*I by lambda
- class priors from the training class frequencies
- lambda chosen on the validation split (ties to the smallest value)

The feature-matrix functions (fit_lda_features, discriminant_scores) are
also the terminal classifier of the FBCSP decoder.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import softmax

from ..config import DEFAULT_RLDA_CONFIG, FS_HZ, RldaFeatureConfig
from ..core.dataset_model import ClassTrial
from ..errors import DataError, NumericError

logger = logging.getLogger(__name__)

# Shrunk covariances with eigenvalue spread beyond this are treated as singular
SINGULAR_RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class RldaModel:
    """
    Fitted rLDA classifier

    pooled_covariance is the unshrunk estimate; the shrunk matrix and the
    linear discriminant weights are derived from it on construction.
    """
    class_means: np.ndarray
    pooled_covariance: np.ndarray
    shrinkage_lambda: float
    class_priors: np.ndarray
    classes: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "class_means", np.atleast_2d(np.asarray(self.class_means, dtype=np.float64)))
        object.__setattr__(self, "pooled_covariance", np.atleast_2d(np.asarray(self.pooled_covariance, dtype=np.float64)))
        object.__setattr__(self, "class_priors", np.asarray(self.class_priors, dtype=np.float64))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

        shrunk = self.shrunk_covariance()
        eigenvalues = linalg.eigvalsh(shrunk)
        if eigenvalues[-1] <= 0 or eigenvalues[0] <= SINGULAR_RCOND * eigenvalues[-1]:
            raise NumericError(f"shrunk covariance is singular at lambda={self.shrinkage_lambda}")

        factor = linalg.cho_factor(shrunk)
        weights = linalg.cho_solve(factor, self.class_means.T).T
        bias = -0.5 * np.sum(weights * self.class_means, axis=1) + np.log(self.class_priors)
        object.__setattr__(self, "_weights", weights)
        object.__setattr__(self, "_bias", bias)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return self.class_means.shape[1]

    def shrunk_covariance(self) -> np.ndarray:
        """(1 - lambda) * pooled + lambda * (trace / d) * I"""
        d = self.pooled_covariance.shape[0]
        target = np.trace(self.pooled_covariance) / d
        lam = self.shrinkage_lambda
        return (1.0 - lam) * self.pooled_covariance + lam * target * np.eye(d)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "classes": list(self.classes),
            "class_means": self.class_means.tolist(),
            "pooled_covariance": self.pooled_covariance.tolist(),
            "shrinkage_lambda": self.shrinkage_lambda,
            "class_priors": self.class_priors.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RldaModel":
        try:
            return cls(
                class_means=np.array(data["class_means"], dtype=np.float64),
                pooled_covariance=np.array(data["pooled_covariance"], dtype=np.float64),
                shrinkage_lambda=float(data["shrinkage_lambda"]),
                class_priors=np.array(data["class_priors"], dtype=np.float64),
                classes=tuple(data["classes"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed rLDA model: {e}") from e


# ============================================================================
# Features
# ============================================================================

def extract_features(
    trial: ClassTrial,
    cfg: RldaFeatureConfig = DEFAULT_RLDA_CONFIG,
    fs_hz: float = FS_HZ,
) -> np.ndarray:
    """
    Mean amplitude per channel in consecutive non-overlapping bins

    Args:
        trial: Class-trial
        cfg: Feature configuration
        fs_hz: Sampling rate of the trial

    Returns:
        Vector of n_channels * n_bins features, channel-major
    """
    width = cfg.bin_samples(fs_hz)
    n_bins = trial.n_samples // width
    binned = trial.samples[:, :n_bins * width].reshape(trial.n_channels, n_bins, width)
    return binned.mean(axis=2).ravel()


def feature_matrix(
    trials: Sequence[ClassTrial],
    cfg: RldaFeatureConfig = DEFAULT_RLDA_CONFIG,
    fs_hz: float = FS_HZ,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked features [n_trials][d] and labels of a trial list"""
    if not trials:
        raise DataError("no trials to extract features from")
    features = np.stack([extract_features(trial, cfg, fs_hz) for trial in trials])
    labels = np.array([trial.label for trial in trials], dtype=int)
    return features, labels


# ============================================================================
# Fitting & Prediction
# ============================================================================

def fit_lda_features(features: np.ndarray, labels: np.ndarray, shrinkage_lambda: float) -> RldaModel:
    """
    Fit rLDA on a feature matrix

    Args:
        features: [n_trials][d]
        labels: Class label per row
        shrinkage_lambda: Shrinkage in [0, 1]

    Returns:
        RldaModel

    Raises:
        DataError: If a class has fewer than 2 trials
        NumericError: On non-finite features or a singular shrunk covariance
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if not np.all(np.isfinite(features)):
        raise NumericError("non-finite values in rLDA features")
    if not 0.0 <= shrinkage_lambda <= 1.0:
        raise NumericError(f"shrinkage lambda {shrinkage_lambda} outside [0, 1]")

    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise DataError(f"rLDA needs at least 2 classes (got {classes.tolist()})")
    if counts.min() < 2:
        sparse = classes[counts < 2].tolist()
        raise DataError(f"classes {sparse} have fewer than 2 training trials")

    means = np.stack([features[labels == c].mean(axis=0) for c in classes])
    centred = features - means[np.searchsorted(classes, labels)]
    # Maximum-likelihood scaling keeps the estimate unchanged under trial duplication
    pooled = centred.T @ centred / features.shape[0]

    return RldaModel(
        class_means=means,
        pooled_covariance=pooled,
        shrinkage_lambda=float(shrinkage_lambda),
        class_priors=counts / counts.sum(),
        classes=tuple(classes.tolist()),
    )


def discriminant_scores(model: RldaModel, features: np.ndarray) -> np.ndarray:
    """
    Linear discriminant delta_k(x) = x' S^-1 mu_k - mu_k' S^-1 mu_k / 2 + log prior_k

    Args:
        model: Fitted model
        features: [n_trials][d] or a single feature vector

    Returns:
        Scores [n_trials][n_classes]
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise DataError(f"model expects {model.n_features} features (got {x.shape[1]})")
    return x @ model._weights.T + model._bias


def predict_features(model: RldaModel, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Labels (ties to the lowest class id) and scores for a feature matrix"""
    scores = discriminant_scores(model, features)
    labels = np.asarray(model.classes)[np.argmax(scores, axis=1)]
    return labels, scores


def fit_rlda(
    trials: Sequence[ClassTrial],
    shrinkage_lambda: float,
    cfg: RldaFeatureConfig = DEFAULT_RLDA_CONFIG,
    fs_hz: float = FS_HZ,
) -> RldaModel:
    """
    Fit rLDA on cleaned training class-trials

    Args:
        trials: Training class-trials (bad trials already removed)
        shrinkage_lambda: Shrinkage in [0, 1]
        cfg: Feature configuration
        fs_hz: Sampling rate of the trials

    Returns:
        RldaModel
    """
    features, labels = feature_matrix(trials, cfg, fs_hz)
    return fit_lda_features(features, labels, shrinkage_lambda)


def predict_rlda(
    model: RldaModel,
    trial: ClassTrial,
    cfg: RldaFeatureConfig = DEFAULT_RLDA_CONFIG,
    fs_hz: float = FS_HZ,
) -> Tuple[int, np.ndarray]:
    """
    Classify one class-trial

    Returns:
        (label, per-class discriminant scores)
    """
    labels, scores = predict_features(model, extract_features(trial, cfg, fs_hz))
    return int(labels[0]), scores[0]


def predict_rlda_batch(
    model: RldaModel,
    trials: Sequence[ClassTrial],
    cfg: RldaFeatureConfig = DEFAULT_RLDA_CONFIG,
    fs_hz: float = FS_HZ,
) -> Tuple[np.ndarray, np.ndarray]:
    """Labels and scores for a list of class-trials"""
    features, _ = feature_matrix(trials, cfg, fs_hz)
    return predict_features(model, features)


def predict_proba_rlda(model: RldaModel, features: np.ndarray) -> np.ndarray:
    """Class posteriors, the softmax of the discriminant scores"""
    return softmax(discriminant_scores(model, features), axis=1)


# ============================================================================
# Shrinkage Selection
# ============================================================================

@dataclass
class LambdaSearch:
    """Outcome of the validation search over the shrinkage grid"""
    shrinkage_lambda: float
    model: RldaModel
    validation_accuracy: float
    scores: Dict[float, Optional[float]]


def search_lambda_features(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    grid: Iterable[float],
) -> LambdaSearch:
    """
    Fit every grid value and keep the best validation accuracy

    Singular candidates count as errors. Ties go to the smallest lambda.

    Raises:
        NumericError: If every candidate is singular
    """
    best: Optional[LambdaSearch] = None
    scores: Dict[float, Optional[float]] = {}
    for lam in sorted(set(float(v) for v in grid)):
        try:
            model = fit_lda_features(train_features, train_labels, lam)
        except NumericError as e:
            logger.warning(f"[rLDA] lambda={lam} skipped: {e}")
            scores[lam] = None
            continue
        predicted, _ = predict_features(model, val_features)
        accuracy = float(np.mean(predicted == np.asarray(val_labels)))
        scores[lam] = accuracy
        if best is None or accuracy > best.validation_accuracy:
            best = LambdaSearch(lam, model, accuracy, scores)

    if best is None:
        raise NumericError("every shrinkage candidate gave a singular covariance")
    best.scores = scores
    logger.debug(f"[rLDA] selected lambda={best.shrinkage_lambda} (validation DA {best.validation_accuracy:.3f})")
    return best


def select_lambda(
    train: Sequence[ClassTrial],
    validation: Sequence[ClassTrial],
    grid: Optional[Iterable[float]] = None,
    cfg: RldaFeatureConfig = DEFAULT_RLDA_CONFIG,
    fs_hz: float = FS_HZ,
) -> float:
    """
    Shrinkage value with the best validation decoding accuracy

    Args:
        train: Cleaned training class-trials
        validation: Cleaned validation class-trials
        grid: Candidate lambdas (cfg.lambda_grid if None)
        cfg: Feature configuration
        fs_hz: Sampling rate of the trials

    Returns:
        Selected lambda
    """
    train_x, train_y = feature_matrix(train, cfg, fs_hz)
    val_x, val_y = feature_matrix(validation, cfg, fs_hz)
    candidates: List[float] = list(cfg.lambda_grid if grid is None else grid)
    if not candidates:
        raise DataError("lambda grid is empty")
    return search_lambda_features(train_x, train_y, val_x, val_y, candidates).shrinkage_lambda
