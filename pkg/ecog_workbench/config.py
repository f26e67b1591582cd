"""
Configuration settings for the μECoG decoding workbench

This module contains all constants, file names, and default settings for the
application. Every configuration object is a dataclass with a validate()
method; module-level DEFAULT_* instances hold the published defaults.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Optional, Tuple

from .errors import ConfigError


# ============================================================================
# Recording Layout
# ============================================================================

# Sampling rate of the auditory array (Hz)
FS_HZ = 900.0

# Contacts per auditory array and their grid geometry
N_CHANNELS = 16
GRID_COLUMNS = 4

# Stimulus trial structure (seconds): 1 s pre, 3 s stimulus, 1 s post
PRE_STIMULUS_S = 1
STIMULUS_S = 3
POST_STIMULUS_S = 1
TRIAL_S = PRE_STIMULUS_S + STIMULUS_S + POST_STIMULUS_S

# Early response window used for topographic maps (seconds after onset)
EARLY_RESPONSE_WINDOW_S = (0.020, 0.200)

# Bands of the sustained stimulus and offset responses (Hz)
STIMULUS_BAND_HZ = (5.0, 40.0)
OFFSET_BAND_HZ = (50.0, 150.0)

# Amplitude rule shared by noisy-contact and bad-trial detection (μV)
AMPLITUDE_THRESHOLD_UV = 800.0


# ============================================================================
# Dataset Files
# ============================================================================

MANIFEST_VERSION = 1
MANIFEST_FILE = "manifest.json"
SAMPLES_FILE = "samples.f32"
DAY_DIR_FORMAT = "day{day_id:02d}"


class Condition(str, Enum):
    """Recording condition of an experiment day"""
    AWAKE = "awake"
    ANESTHESIA = "anesthesia"


# ============================================================================
# Decoding Methods & Reporting
# ============================================================================

METHODS: Tuple[str, ...] = ("rlda", "fbcsp", "convnet")

# Reporting chance levels per class count
CHANCE_LEVELS: Dict[int, float] = {2: 0.5, 3: 1.0 / 3.0}

# Significance thresholds, most significant first
SIGNIFICANCE_LEVELS: Tuple[Tuple[float, str], ...] = (
    (0.001, "***"),
    (0.01, "**"),
    (0.05, "*"),
)

# Class groups of the merged 3-class report: Response 1 vs Responses 2+3
MERGED_RESPONSE_GROUPS: Tuple[Tuple[int, ...], ...] = ((1,), (2, 3))

# Marker symbol per method pair in the cross-method summary
PAIR_MARKERS: Dict[Tuple[str, str], str] = {
    ("convnet", "rlda"): "*",
    ("fbcsp", "rlda"): "#",
    ("convnet", "fbcsp"): "+",
}

# Placeholder written for undefined statistics (empty row/column)
UNDEFINED_MARKER = "NA"


# ============================================================================
# Synthetic Data
# ============================================================================

@dataclass(frozen=True)
class SynthConfig:
    """Synthetic recording generator configuration"""
    # Number of experiment days and stimulus repetitions per day
    n_days: int = 15
    trials_per_day: int = 261

    # Days recorded under general anesthesia
    anesthesia_days: FrozenSet[int] = frozenset({14, 15})

    # Base seed; every day derives its own stream from (seed, day_id)
    seed: int = 42

    # Evoked-to-background amplitude ratio
    snr: float = 1.0

    # Probability per trial of an artifact burst above the amplitude threshold
    artifact_rate: float = 0.02

    fs_hz: float = FS_HZ
    n_channels: int = N_CHANNELS

    # Contacts whose background is inflated past the noisy-contact rule
    noisy_channels: FrozenSet[int] = frozenset()

    # Scale of the AEP transient relative to the sustained band components
    early_response_gain: float = 1.0

    # Background noise RMS (μV)
    background_rms_uv: float = 50.0

    # Peak AEP amplitude at unit spatial gain (μV)
    aep_amplitude_uv: float = 120.0

    # Onset amplitude of the 4 Hz phase-locked sustained response (μV)
    sustained_amplitude_uv: float = 60.0

    # Evoked scaling on anesthesia days
    anesthesia_factor: float = 0.3

    # Artifact burst peak amplitude (μV) and duration (s)
    artifact_amplitude_uv: float = 1500.0
    artifact_duration_s: float = 0.05

    def validate(self) -> None:
        if self.n_days < 1:
            raise ConfigError(f"n_days must be >= 1 (got {self.n_days})")
        if self.trials_per_day < 1:
            raise ConfigError(f"trials_per_day must be >= 1 (got {self.trials_per_day})")
        if not 0.0 <= self.artifact_rate <= 1.0:
            raise ConfigError(f"artifact_rate must lie in [0, 1] (got {self.artifact_rate})")
        if self.snr < 0:
            raise ConfigError(f"snr must be >= 0 (got {self.snr})")
        if self.aep_amplitude_uv < 0 or self.sustained_amplitude_uv < 0:
            raise ConfigError("evoked amplitudes must be >= 0")
        if self.fs_hz <= 0:
            raise ConfigError(f"fs_hz must be > 0 (got {self.fs_hz})")
        if self.n_channels < 2:
            raise ConfigError(f"n_channels must be >= 2 (got {self.n_channels})")
        if any(not 0 <= ch < self.n_channels for ch in self.noisy_channels):
            raise ConfigError(f"noisy_channels out of range: {sorted(self.noisy_channels)}")


DEFAULT_SYNTH_CONFIG = SynthConfig()


# ============================================================================
# Preprocessing
# ============================================================================

@dataclass(frozen=True)
class PreprocessConfig:
    """Re-referencing, rejection and Butterworth filter configuration"""
    # Fraction of samples above threshold that marks a contact as noisy
    noisy_fraction: float = 0.20

    # Amplitude rule for contacts and class-trials (μV)
    amplitude_threshold_uv: float = AMPLITUDE_THRESHOLD_UV

    # Butterworth cut-offs (Hz) and order
    hp_cutoff_hz: float = 0.5
    lp_cutoff_hz: float = 120.0
    filter_order: int = 2

    def validate(self, fs_hz: float = FS_HZ) -> None:
        if not 0.0 < self.noisy_fraction < 1.0:
            raise ConfigError(f"noisy_fraction must lie in (0, 1) (got {self.noisy_fraction})")
        if self.amplitude_threshold_uv <= 0:
            raise ConfigError("amplitude_threshold_uv must be > 0")
        if not 0.0 < self.hp_cutoff_hz < self.lp_cutoff_hz < fs_hz / 2.0:
            raise ConfigError(
                f"cut-offs must satisfy 0 < hp ({self.hp_cutoff_hz}) < lp "
                f"({self.lp_cutoff_hz}) < fs/2 ({fs_hz / 2.0})"
            )
        if self.filter_order < 1:
            raise ConfigError(f"filter_order must be >= 1 (got {self.filter_order})")


DEFAULT_PREPROCESS_CONFIG = PreprocessConfig()


# ============================================================================
# Spectral Analysis
# ============================================================================

class WindowFunction(str, Enum):
    HANN = "hann"
    RECTANGULAR = "rectangular"


class Prewhiten(str, Enum):
    FIRST_DIFFERENCE = "first_difference"
    NONE = "none"


@dataclass(frozen=True)
class SpectralConfig:
    """Sliding-window FFT and relative spectral power configuration"""
    window_ms: float = 250.0
    step_ms: float = 80.0

    # Pre-onset time bins averaged into the baseline
    baseline_bins: int = 10

    window_function: WindowFunction = WindowFunction.HANN
    prewhiten: Prewhiten = Prewhiten.FIRST_DIFFERENCE

    # Baseline power floor (replaces zero baselines)
    baseline_floor: float = 1e-12

    def window_samples(self, fs_hz: float) -> int:
        return _whole_samples(self.window_ms, fs_hz, "window_ms")

    def step_samples(self, fs_hz: float) -> int:
        return _whole_samples(self.step_ms, fs_hz, "step_ms")

    def validate(self, fs_hz: float = FS_HZ) -> None:
        if self.window_samples(fs_hz) < 2:
            raise ConfigError("window must span at least 2 samples")
        if self.step_samples(fs_hz) < 1:
            raise ConfigError("step must span at least 1 sample")
        if self.baseline_bins < 1:
            raise ConfigError("baseline_bins must be >= 1")


def _whole_samples(duration_ms: float, fs_hz: float, name: str) -> int:
    exact = duration_ms * fs_hz / 1000.0
    count = int(round(exact))
    if abs(exact - count) > 1e-9:
        raise ConfigError(f"{name}={duration_ms} is not a whole number of samples at {fs_hz} Hz")
    return count


DEFAULT_SPECTRAL_CONFIG = SpectralConfig()


# ============================================================================
# Decoders
# ============================================================================

# Shrinkage candidates evaluated on the validation split
DEFAULT_LAMBDA_GRID: Tuple[float, ...] = (0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class RldaFeatureConfig:
    """rLDA feature extraction and shrinkage search configuration"""
    # Temporal averaging bin width (ms); 40 ms gives 25 bins per 1 s epoch
    bin_ms: float = 40.0
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID

    def bin_samples(self, fs_hz: float) -> int:
        return _whole_samples(self.bin_ms, fs_hz, "bin_ms")

    def validate(self, fs_hz: float = FS_HZ) -> None:
        width = self.bin_samples(fs_hz)
        if width < 1 or int(round(fs_hz)) % width != 0:
            raise ConfigError(f"bin_ms={self.bin_ms} does not divide a 1 s epoch evenly")
        if not self.lambda_grid or any(not 0.0 <= lam <= 1.0 for lam in self.lambda_grid):
            raise ConfigError("lambda_grid must be a non-empty set of values in [0, 1]")


DEFAULT_RLDA_CONFIG = RldaFeatureConfig()


DEFAULT_BANDS: Tuple[Tuple[float, float], ...] = (
    (0.5, 4.0),
    (4.0, 8.0),
    (8.0, 13.0),
    (13.0, 30.0),
    (30.0, 50.0),
    (50.0, 70.0),
    (70.0, 90.0),
    (90.0, 120.0),
)


@dataclass(frozen=True)
class FbcspConfig:
    """Filter bank CSP configuration"""
    bands: Tuple[Tuple[float, float], ...] = DEFAULT_BANDS

    # Butterworth order of each band edge (highpass + lowpass)
    filter_order: int = 2

    # Candidate numbers of CSP filter pairs
    m_candidates: Tuple[int, ...] = (2, 3, 4)
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID

    # Variance floor before the log
    variance_floor: float = 1e-12

    def validate(self, fs_hz: float = FS_HZ) -> None:
        if not self.bands:
            raise ConfigError("filter bank needs at least one band")
        previous_high = 0.0
        for low, high in self.bands:
            if not 0.0 < low < high < fs_hz / 2.0:
                raise ConfigError(f"band ({low}, {high}) must lie inside (0, fs/2)")
            if low < previous_high:
                raise ConfigError(f"band ({low}, {high}) overlaps its predecessor")
            previous_high = high
        if not self.m_candidates or min(self.m_candidates) < 1:
            raise ConfigError("m_candidates must be a non-empty set of positive integers")
        if not self.lambda_grid:
            raise ConfigError("lambda_grid must not be empty")


DEFAULT_FBCSP_CONFIG = FbcspConfig()


@dataclass(frozen=True)
class ConvNetArchitecture:
    """Four-block Conv-Pool network layout"""
    # Filters per block; block 1 uses the same count for temporal and spatial layers
    n_filters: Tuple[int, ...] = (25, 50, 100, 200)
    kernel_length: int = 10
    pool_length: int = 3
    pool_stride: int = 3

    # Dropout on the input of every convolution after block 1
    dropout: float = 0.5

    batch_norm_eps: float = 1e-5
    batch_norm_momentum: float = 0.1

    def output_length(self, n_samples: int) -> int:
        """Temporal length entering the dense layer for a given input length"""
        length = n_samples
        for _ in self.n_filters:
            length = length - self.kernel_length + 1
            length = (length - self.pool_length) // self.pool_stride + 1 if length >= self.pool_length else 0
        return length

    def validate(self, n_samples: int = int(FS_HZ)) -> None:
        if len(self.n_filters) < 1 or min(self.n_filters) < 1:
            raise ConfigError("n_filters must list at least one positive filter count")
        if self.kernel_length < 1 or self.pool_length < 1 or self.pool_stride < 1:
            raise ConfigError("kernel and pool sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1) (got {self.dropout})")
        if self.output_length(n_samples) < 1:
            raise ConfigError(f"architecture leaves no samples for a {n_samples}-sample input")


DEFAULT_ARCHITECTURE = ConvNetArchitecture()


@dataclass(frozen=True)
class TrainConfig:
    """Adam training and two-phase early stopping configuration"""
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 500
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8

    # Epochs without validation improvement before phase 1 stops
    patience: int = 30

    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigError("learning_rate and epsilon must be > 0")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if not all(0.0 <= beta < 1.0 for beta in self.betas):
            raise ConfigError(f"betas must lie in [0, 1) (got {self.betas})")


DEFAULT_TRAIN_CONFIG = TrainConfig()


# ============================================================================
# Experiment
# ============================================================================

# Chronological split ratios (train, validation, test)
SPLIT_RATIOS: Tuple[float, float, float] = (0.64, 0.16, 0.20)


@dataclass
class ExperimentConfig:
    """Complete configuration of one decoding experiment"""
    dataset: str = ""
    output: str = "results"
    n_classes: int = 2
    methods: Tuple[str, ...] = METHODS

    # Epochs that form the "no stimulus" class of the 2-class scheme
    no_stim_epochs: Tuple[int, ...] = (1, 5)

    seed: int = 42

    # Parallel workers (None: one per physical core)
    workers: Optional[int] = None

    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    rlda: RldaFeatureConfig = field(default_factory=RldaFeatureConfig)
    fbcsp: FbcspConfig = field(default_factory=FbcspConfig)
    architecture: ConvNetArchitecture = field(default_factory=ConvNetArchitecture)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.n_classes not in (2, 3):
            raise ConfigError(f"n_classes must be 2 or 3 (got {self.n_classes})")
        if not self.methods:
            raise ConfigError("at least one method must be selected")
        for method in self.methods:
            if method not in METHODS:
                raise ConfigError(f"unknown method '{method}' (choose from {', '.join(METHODS)})")
        if not self.no_stim_epochs or any(e not in (1, 5) for e in self.no_stim_epochs):
            raise ConfigError(f"no_stim_epochs must be a subset of (1, 5) (got {self.no_stim_epochs})")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers must be >= 1 (got {self.workers})")
        self.preprocess.validate()
        self.spectral.validate()
        self.rlda.validate()
        self.fbcsp.validate()
        self.architecture.validate()
        self.train.validate()


# ============================================================================
# Logging Configuration
# ============================================================================

# Log message format ({-style, rendered by logging.Formatter)
LOG_FORMAT = "[{asctime}] [{levelname}] {message}"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


# ============================================================================
# Version Information
# ============================================================================

VERSION = "1.0.0"
PROJECT_NAME = "ecog_workbench"
PROJECT_DESCRIPTION = "Decoding workbench for auditory-evoked μECoG recordings"
