"""
Preprocessing

The fixed re-referencing and filtering chain applied to every recording:
1. Common average reference over all contacts
2. Noisy-contact detection (more than 20% of samples above 800 μV)
3. Common average reference again over the remaining contacts
4. Butterworth high-pass (0.5 Hz)
5. Butterworth low-pass (120 Hz), decoding path only

Filters are designed here from the analog Butterworth prototype with a
pre-warped bilinear transform and stored as biquad (second-order section)
cascades. Filtering is causal, forward-only, with zero initial state.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Sequence

import numpy as np
from scipy import signal

from ..config import DEFAULT_PREPROCESS_CONFIG, PreprocessConfig
from ..errors import ConfigError, DataError
from .dataset_model import ClassTrial, Recording

logger = logging.getLogger(__name__)

FILTER_KINDS = ("highpass", "lowpass", "bandpass")


@dataclass(frozen=True, eq=False)
class BiquadCascade:
    """
    Cascade of second-order sections

    sections has one row per biquad in the (b0, b1, b2, 1, a1, a2) layout
    used by scipy.signal.sosfilt. First-order stages are stored as biquads
    with b2 = a2 = 0.
    """
    sections: np.ndarray
    fs_hz: float
    kind: str
    cutoffs_hz: tuple
    order: int

    @property
    def coefficients(self) -> np.ndarray:
        """Per-section (b0, b1, b2, a1, a2)"""
        return self.sections[:, [0, 1, 2, 4, 5]]

    def poles(self) -> np.ndarray:
        """All poles of the cascade in the z-plane"""
        roots = [np.roots(section[3:6]) for section in self.sections]
        return np.concatenate(roots) if roots else np.zeros(0, dtype=complex)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def __add__(self, other: "BiquadCascade") -> "BiquadCascade":
        if other.fs_hz != self.fs_hz:
            raise ConfigError("cannot chain filters designed for different sampling rates")
        kind = "bandpass" if {self.kind, other.kind} == {"highpass", "lowpass"} else self.kind
        return BiquadCascade(
            sections=np.vstack([self.sections, other.sections]),
            fs_hz=self.fs_hz,
            kind=kind,
            cutoffs_hz=tuple(sorted(self.cutoffs_hz + other.cutoffs_hz)),
            order=self.order + other.order,
        )


# ============================================================================
# Filter Design
# ============================================================================

def design_butterworth(kind: str, cutoff_hz: float, order: int, fs_hz: float) -> BiquadCascade:
    """
    Design a digital Butterworth high-pass or low-pass filter

    The analog prototype poles exp(j*pi*(2k+n-1)/(2n)) are scaled to the
    pre-warped cut-off 2*fs*tan(pi*fc/fs), mapped through the bilinear
    transform and paired into biquads. Each section is normalized to unit
    gain in its pass band (DC for low-pass, Nyquist for high-pass).

    Args:
        kind: "highpass" or "lowpass"
        cutoff_hz: -3 dB frequency (Hz)
        order: Filter order (>= 1)
        fs_hz: Sampling rate (Hz)

    Returns:
        Stable BiquadCascade

    Raises:
        ConfigError: If the cut-off is outside (0, fs/2) or kind/order are invalid
    """
    if kind not in ("highpass", "lowpass"):
        raise ConfigError(f"unknown filter kind '{kind}'")
    if order < 1:
        raise ConfigError(f"filter order must be >= 1 (got {order})")
    if not 0.0 < cutoff_hz < fs_hz / 2.0:
        raise ConfigError(f"cut-off {cutoff_hz} Hz outside (0, {fs_hz / 2.0}) Hz")

    fs2 = 2.0 * fs_hz
    warped = fs2 * np.tan(np.pi * cutoff_hz / fs_hz)

    # Prototype poles in the left half plane; keep one of each conjugate pair
    k = np.arange(1, order + 1)
    prototype = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    upper = [p for p in prototype if p.imag > 1e-12]
    real = [p for p in prototype if abs(p.imag) <= 1e-12]

    sections = []
    for p in upper + real:
        s_pole = warped * p if kind == "lowpass" else warped / p
        z_pole = (fs2 + s_pole) / (fs2 - s_pole)
        zero = -1.0 if kind == "lowpass" else 1.0

        if abs(p.imag) > 1e-12:
            b = np.array([1.0, -2.0 * zero, 1.0])
            a = np.array([1.0, -2.0 * z_pole.real, abs(z_pole) ** 2])
        else:
            b = np.array([1.0, -zero, 0.0])
            a = np.array([1.0, -z_pole.real, 0.0])

        # Unit gain at DC (z = 1) or Nyquist (z = -1)
        z_ref = 1.0 if kind == "lowpass" else -1.0
        powers = np.array([1.0, z_ref, z_ref ** 2])
        b = b * (a @ powers) / (b @ powers)
        sections.append(np.concatenate([b, a]))

    cascade = BiquadCascade(
        sections=np.array(sections),
        fs_hz=fs_hz,
        kind=kind,
        cutoffs_hz=(cutoff_hz,),
        order=order,
    )
    if not cascade.is_stable():
        raise ConfigError(f"{kind} design at {cutoff_hz} Hz is not stable")
    return cascade


def design_bandpass(low_hz: float, high_hz: float, order: int, fs_hz: float) -> BiquadCascade:
    """
    Band-pass as a high-pass at low_hz followed by a low-pass at high_hz

    Args:
        low_hz: Lower band edge (Hz)
        high_hz: Upper band edge (Hz)
        order: Order of each edge filter
        fs_hz: Sampling rate (Hz)

    Returns:
        BiquadCascade of both edge filters
    """
    if not low_hz < high_hz:
        raise ConfigError(f"band edges must satisfy low < high (got {low_hz}, {high_hz})")
    return design_butterworth("highpass", low_hz, order, fs_hz) + design_butterworth(
        "lowpass", high_hz, order, fs_hz
    )


def frequency_response(cascade: BiquadCascade, freqs_hz: Sequence[float]) -> np.ndarray:
    """
    Complex frequency response of a cascade

    Args:
        cascade: Designed filter
        freqs_hz: Frequencies to evaluate (Hz)

    Returns:
        Complex response H(e^{j*2*pi*f/fs}) at each frequency
    """
    _, response = signal.sosfreqz(
        cascade.sections, worN=np.asarray(freqs_hz, dtype=np.float64), fs=cascade.fs_hz
    )
    return response


# ============================================================================
# Filtering
# ============================================================================

def filter_array(samples: np.ndarray, filt: BiquadCascade) -> np.ndarray:
    """Causal forward filtering along the last axis with zero initial state"""
    return signal.sosfilt(filt.sections, np.asarray(samples, dtype=np.float64), axis=-1)


def apply_filter(rec: Recording, filt: BiquadCascade) -> Recording:
    """
    Filter every channel of a recording

    Args:
        rec: Input recording
        filt: Cascade designed for rec.fs_hz

    Returns:
        Recording with filtered samples (same length)

    Raises:
        DataError: If the filter was designed for another sampling rate
    """
    if abs(filt.fs_hz - rec.fs_hz) > 1e-9:
        raise DataError(f"filter designed for {filt.fs_hz} Hz applied to a {rec.fs_hz} Hz recording")
    return rec.with_samples(filter_array(rec.samples, filt))


# ============================================================================
# Re-referencing & Rejection
# ============================================================================

def common_average_reference(rec: Recording) -> Recording:
    """
    Subtract the per-sample mean of the non-excluded contacts from each of them

    Args:
        rec: Input recording; excluded contacts are left untouched

    Returns:
        Re-referenced recording

    Raises:
        DataError: If fewer than 2 contacts are usable
    """
    included = ~rec.excluded_mask
    if included.sum() < 2:
        raise DataError(f"common average reference needs >= 2 usable channels (got {int(included.sum())})")

    samples = np.array(rec.samples)
    samples[included] -= samples[included].mean(axis=0, keepdims=True)
    return rec.with_samples(samples)


def detect_noisy_channels(rec: Recording, cfg: PreprocessConfig = DEFAULT_PREPROCESS_CONFIG) -> np.ndarray:
    """
    Flag contacts whose fraction of samples above the amplitude threshold
    strictly exceeds cfg.noisy_fraction

    Args:
        rec: Recording after the first re-referencing pass
        cfg: Preprocessing configuration

    Returns:
        Boolean mask, True for noisy contacts
    """
    above = np.abs(rec.samples) > cfg.amplitude_threshold_uv
    return above.mean(axis=1) > cfg.noisy_fraction


def flag_bad_trials(trials: Sequence[ClassTrial], threshold_uv: float) -> List[ClassTrial]:
    """
    Mark class-trials with any sample above the threshold as bad

    Trials are flagged, never removed; the split decides what is kept.

    Args:
        trials: Class-trials to inspect
        threshold_uv: Amplitude rule (μV), strict inequality

    Returns:
        New list with the bad flag set on every trial
    """
    return [
        replace(trial, bad=bool(np.any(np.abs(trial.samples) > threshold_uv)))
        for trial in trials
    ]


# ============================================================================
# Full chain
# ============================================================================

@dataclass
class PreprocessResult:
    """Output of the preprocessing chain"""
    recording: Recording
    noisy_mask: np.ndarray
    steps: List[str] = field(default_factory=list)


def preprocess_recording(
    rec: Recording,
    cfg: PreprocessConfig = DEFAULT_PREPROCESS_CONFIG,
    decoding_path: bool = True,
) -> PreprocessResult:
    """
    Run the fixed preprocessing chain on one recording

    Args:
        rec: Raw recording
        cfg: Preprocessing configuration
        decoding_path: Apply the low-pass stage (True for decoding, False for spectra)

    Returns:
        PreprocessResult with the filtered recording and noisy-contact mask
    """
    cfg.validate(rec.fs_hz)
    steps: List[str] = []

    referenced = common_average_reference(rec)
    steps.append(f"car({int((~rec.excluded_mask).sum())} contacts)")

    noisy = detect_noisy_channels(referenced, cfg)
    if noisy.any():
        logger.warning(
            f"[Preprocess] day {rec.day_id}: excluding noisy contacts "
            f"{[ch.index for ch, flag in zip(rec.channels, noisy) if flag]}"
        )
    steps.append(f"detect_noisy({int(noisy.sum())} flagged)")

    # Second pass starts again from the raw signal of the remaining contacts
    excluded = rec.excluded_mask | noisy
    current = common_average_reference(rec.with_exclusions(excluded))
    steps.append(f"car({int((~excluded).sum())} contacts)")

    current = apply_filter(current, design_butterworth("highpass", cfg.hp_cutoff_hz, cfg.filter_order, rec.fs_hz))
    steps.append(f"highpass({cfg.hp_cutoff_hz} Hz, order {cfg.filter_order})")

    if decoding_path:
        current = apply_filter(current, design_butterworth("lowpass", cfg.lp_cutoff_hz, cfg.filter_order, rec.fs_hz))
        steps.append(f"lowpass({cfg.lp_cutoff_hz} Hz, order {cfg.filter_order})")

    logger.info(f"[Preprocess] day {rec.day_id}: {' -> '.join(steps)}")
    return PreprocessResult(recording=current, noisy_mask=noisy, steps=steps)
