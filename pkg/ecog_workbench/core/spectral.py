"""
Spectral Analysis

Time-frequency analysis of stimulus trials and evoked-potential summaries:
- pre-whitening (first difference)
- sliding-window FFT power (250 ms window, 80 ms step at 900 Hz)
- relative spectral power against the pre-onset baseline and its mean over
  the stimulus-band and offset-band regions
- trial-averaged AEP and early-response topographic maps

The 225-sample window at 900 Hz gives 113 one-sided bins at 4 Hz spacing
(0 - 448 Hz) and 60 frames for a 4500-sample trial.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from ..config import (
    DEFAULT_SPECTRAL_CONFIG,
    EARLY_RESPONSE_WINDOW_S,
    GRID_COLUMNS,
    OFFSET_BAND_HZ,
    STIMULUS_BAND_HZ,
    STIMULUS_S,
    Prewhiten,
    SpectralConfig,
    WindowFunction,
)
from ..errors import DataError
from .dataset_model import ChannelMeta, StimulusTrial

logger = logging.getLogger(__name__)

# Regions summarized per day: name -> (band in Hz, frame-centre window in s after onset)
SUMMARY_REGIONS: Dict[str, Tuple[Tuple[float, float], Tuple[float, float]]] = {
    "stimulus": (STIMULUS_BAND_HZ, (0.2, STIMULUS_S - 0.2)),
    "offset": (OFFSET_BAND_HZ, (STIMULUS_S + 0.15, STIMULUS_S + 0.85)),
}


class MapKind(str, Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


@dataclass(frozen=True, eq=False)
class SpectralMap:
    """
    Time-frequency power per channel

    values is [channel][freq_bin][time_bin]; time_axis_s holds window-centre
    times relative to the trial start. fs_hz is the rate of the trial the
    map was computed from.
    """
    values: np.ndarray
    freq_axis_hz: np.ndarray
    time_axis_s: np.ndarray
    kind: MapKind
    fs_hz: float
    onset_s: float = 1.0

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]


def _window(cfg: SpectralConfig, n: int) -> np.ndarray:
    if cfg.window_function == WindowFunction.RECTANGULAR:
        return np.ones(n)
    return signal.get_window("hann", n)


def prewhiten(trial: StimulusTrial, cfg: SpectralConfig = DEFAULT_SPECTRAL_CONFIG) -> StimulusTrial:
    """
    First-difference pre-whitening: y[t] = x[t] - x[t-1], y[0] = 0

    Args:
        trial: Input trial
        cfg: Spectral configuration (Prewhiten.NONE returns the trial as is)

    Returns:
        Pre-whitened trial
    """
    if cfg.prewhiten == Prewhiten.NONE:
        return trial
    diff = np.zeros_like(trial.samples)
    diff[:, 1:] = np.diff(trial.samples, axis=1)
    return StimulusTrial(
        samples=diff,
        fs_hz=trial.fs_hz,
        trigger_offset=trial.trigger_offset,
        index=trial.index,
        day_id=trial.day_id,
    )


def n_frames(n_samples: int, window: int, step: int) -> int:
    """Number of full windows: floor((N - W) / S) + 1"""
    if n_samples < window:
        return 0
    return (n_samples - window) // step + 1


def stft_power(trial: StimulusTrial, cfg: SpectralConfig = DEFAULT_SPECTRAL_CONFIG) -> SpectralMap:
    """
    One-sided sliding-window power spectrum of every channel

    Power is scaled so that the sum over bins of one frame equals the energy
    of the windowed frame (Parseval).

    Args:
        trial: Input trial (pre-whitened or not)
        cfg: Spectral configuration

    Returns:
        Absolute SpectralMap of shape [channel][window//2 + 1][n_frames]

    Raises:
        DataError: If the trial is shorter than one window
    """
    cfg.validate(trial.fs_hz)
    window = cfg.window_samples(trial.fs_hz)
    step = cfg.step_samples(trial.fs_hz)
    n_samples = trial.samples.shape[1]
    if n_samples < window:
        raise DataError(f"trial of {n_samples} samples is shorter than the {window}-sample window")

    frames = sliding_window_view(trial.samples, window, axis=1)[:, ::step, :]
    spectrum = np.fft.rfft(frames * _window(cfg, window), axis=-1)
    power = np.abs(spectrum) ** 2 / window

    # Every bin except DC (and Nyquist for even windows) appears twice in the full spectrum
    power[..., 1:] *= 2.0
    if window % 2 == 0:
        power[..., -1] /= 2.0

    freqs = np.fft.rfftfreq(window, d=1.0 / trial.fs_hz)
    starts = np.arange(frames.shape[1]) * step
    times = (starts + window / 2.0) / trial.fs_hz
    return SpectralMap(
        values=np.transpose(power, (0, 2, 1)),
        freq_axis_hz=freqs,
        time_axis_s=times,
        kind=MapKind.ABSOLUTE,
        fs_hz=trial.fs_hz,
        onset_s=trial.trigger_offset / trial.fs_hz,
    )


def baseline_frames(spectral_map: SpectralMap, window_s: float) -> np.ndarray:
    """Indices of frames that end at or before stimulus onset"""
    frame_ends = spectral_map.time_axis_s + window_s / 2.0
    return np.flatnonzero(frame_ends <= spectral_map.onset_s + 1e-12)


def relative_spectral_power(
    spectral_map: SpectralMap,
    cfg: SpectralConfig = DEFAULT_SPECTRAL_CONFIG,
) -> SpectralMap:
    """
    Divide absolute power by the mean of the first pre-onset frames

    Args:
        spectral_map: Absolute map
        cfg: Spectral configuration (baseline_bins frames form the baseline)

    Returns:
        Relative SpectralMap

    Raises:
        DataError: If fewer than baseline_bins frames precede stimulus onset
    """
    if spectral_map.kind != MapKind.ABSOLUTE:
        raise DataError("relative power needs an absolute spectral map")
    window_s = cfg.window_samples(spectral_map.fs_hz) / spectral_map.fs_hz
    pre_onset = baseline_frames(spectral_map, window_s)
    if pre_onset.size < cfg.baseline_bins:
        raise DataError(
            f"only {pre_onset.size} frames lie before stimulus onset "
            f"({cfg.baseline_bins} needed for the baseline)"
        )

    baseline = spectral_map.values[:, :, pre_onset[:cfg.baseline_bins]].mean(axis=2, keepdims=True)
    too_small = baseline < cfg.baseline_floor
    if too_small.any():
        logger.warning(
            f"[Spectral] {int(too_small.sum())} zero-power baseline bins replaced by {cfg.baseline_floor}"
        )
        baseline = np.where(too_small, cfg.baseline_floor, baseline)

    return SpectralMap(
        values=spectral_map.values / baseline,
        freq_axis_hz=spectral_map.freq_axis_hz,
        time_axis_s=spectral_map.time_axis_s,
        kind=MapKind.RELATIVE,
        fs_hz=spectral_map.fs_hz,
        onset_s=spectral_map.onset_s,
    )


def average_relative_power(
    trials: Sequence[StimulusTrial],
    cfg: SpectralConfig = DEFAULT_SPECTRAL_CONFIG,
) -> SpectralMap:
    """
    Trial-averaged relative spectral power

    Absolute power is averaged over trials first and then normalized by the
    averaged baseline.

    Args:
        trials: Stimulus trials of one day
        cfg: Spectral configuration

    Returns:
        Relative SpectralMap
    """
    if not trials:
        raise DataError("cannot average spectra of an empty trial list")
    total = None
    for trial in trials:
        absolute = stft_power(prewhiten(trial, cfg), cfg)
        total = absolute.values.copy() if total is None else total + absolute.values
    mean_map = SpectralMap(
        values=total / len(trials),
        freq_axis_hz=absolute.freq_axis_hz,
        time_axis_s=absolute.time_axis_s,
        kind=MapKind.ABSOLUTE,
        fs_hz=absolute.fs_hz,
        onset_s=absolute.onset_s,
    )
    return relative_spectral_power(mean_map, cfg)


def band_mean(
    spectral_map: SpectralMap,
    low_hz: float,
    high_hz: float,
    t_start_s: float,
    t_end_s: float,
) -> float:
    """
    Mean map value over a time-frequency rectangle (all channels)

    Frames count when their centre lies in [t_start_s, t_end_s); bins count
    when their frequency lies in [low_hz, high_hz].
    """
    freq_mask = (spectral_map.freq_axis_hz >= low_hz) & (spectral_map.freq_axis_hz <= high_hz)
    time_mask = (spectral_map.time_axis_s >= t_start_s) & (spectral_map.time_axis_s < t_end_s)
    if not freq_mask.any() or not time_mask.any():
        raise DataError(f"empty band {low_hz}-{high_hz} Hz x {t_start_s}-{t_end_s} s")
    return float(spectral_map.values[:, freq_mask][:, :, time_mask].mean())


def region_means(spectral_map: SpectralMap) -> Dict[str, float]:
    """
    Mean relSP of every summary region, windows placed at the map's onset

    Returns:
        {region name: mean value over all channels}
    """
    return {
        name: band_mean(spectral_map, *band, spectral_map.onset_s + start, spectral_map.onset_s + end)
        for name, (band, (start, end)) in SUMMARY_REGIONS.items()
    }


# ============================================================================
# Evoked potentials
# ============================================================================

def average_aep(trials: Sequence[StimulusTrial]) -> np.ndarray:
    """
    Arithmetic mean of stimulus trials per channel and sample

    Args:
        trials: Stimulus trials of one day

    Returns:
        [channel][samples] averaged response
    """
    if not trials:
        raise DataError("cannot average an empty trial list")
    return np.mean(np.stack([trial.samples for trial in trials]), axis=0)


def topographic_map(
    aep: np.ndarray,
    channels: Sequence[ChannelMeta],
    fs_hz: float,
    onset_sample: int,
    window_s: Tuple[float, float] = EARLY_RESPONSE_WINDOW_S,
) -> np.ndarray:
    """
    Signed peak amplitude of each contact within the early response window

    Args:
        aep: Averaged response [channel][samples]
        channels: Contact metadata (grid positions and exclusion flags)
        fs_hz: Sampling rate (Hz)
        onset_sample: Stimulus onset within the averaged trial
        window_s: Window after onset (seconds)

    Returns:
        Grid of signed peaks (value with the largest magnitude); NaN for
        excluded contacts and unused grid cells
    """
    start = onset_sample + int(round(window_s[0] * fs_hz))
    stop = onset_sample + int(round(window_s[1] * fs_hz)) + 1
    segment = aep[:, start:stop]
    peak_index = np.argmax(np.abs(segment), axis=1)
    peaks = segment[np.arange(segment.shape[0]), peak_index]

    n_rows = max(ch.grid_row for ch in channels) + 1
    n_cols = max(max(ch.grid_col for ch in channels) + 1, GRID_COLUMNS)
    grid = np.full((n_rows, n_cols), np.nan)
    for row, ch in enumerate(channels):
        if not ch.excluded:
            grid[ch.grid_row, ch.grid_col] = peaks[row]
    return grid
