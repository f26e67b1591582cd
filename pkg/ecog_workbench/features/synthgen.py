"""
Synthetic Recording Generator

Deterministic stand-in for auditory-cortex μECoG recordings. Every day is a
continuous recording of 5 s stimulus trials (1 s pre, 3 s stimulus, 1 s post)
built from:
- 1/f background noise (RMS ~50 μV), independent per contact
- an AEP transient (two damped sinusoids, 8 Hz and 25 Hz) confined to
  20 - 200 ms after onset
- a 4 Hz phase-locked sustained response over the stimulus, adapting from
  its onset amplitude towards a floor
- a 5 - 40 Hz amplitude increase during the stimulus
- a 50 - 150 Hz amplitude increase in the second after stimulus offset
- optional >800 μV artifact bursts

Band-power components follow a smooth positive gain profile over the 4x4
grid. Phase-locked components (AEP and sustained response) follow a
zero-mean topography with a polarity reversal, so common average
referencing keeps them. Everything evoked is scaled down on anesthesia
days. Each day draws from its own random stream derived from
(seed, day_id), so days are reproducible in any order.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal

from ..config import (
    DAY_DIR_FORMAT,
    DEFAULT_SYNTH_CONFIG,
    OFFSET_BAND_HZ,
    PRE_STIMULUS_S,
    STIMULUS_BAND_HZ,
    STIMULUS_S,
    TRIAL_S,
    Condition,
    SynthConfig,
)
from ..core.dataset_model import Recording, default_channels, write_dataset
from ..errors import ConfigError

logger = logging.getLogger(__name__)

# Fractional amplitude increase of a band at unit gain
BAND_MODULATION = 0.8

# Sustained response: frequency, adaptation floor and time constant
SUSTAINED_FREQ_HZ = 4.0
_ADAPTATION_FLOOR = 0.35
_ADAPTATION_TAU_S = 0.6

# Centre and width of the spatial gain profile in grid units
_GAIN_CENTRE = (1.2, 1.7)
_GAIN_WIDTH = 1.6
_TOPOGRAPHY_WIDTH = 1.0

# 1/f shaping stops at this frequency (flat below)
_PINK_CORNER_HZ = 1.0

_RAMP_S = 0.05


def spatial_gains(config: SynthConfig = DEFAULT_SYNTH_CONFIG) -> np.ndarray:
    """
    Evoked gain of every contact, a Gaussian bump over the grid in [0.25, 1]

    Args:
        config: Generator configuration

    Returns:
        Gain per contact, indexed like the recording's channels
    """
    return 0.25 + 0.75 * _bump(config, _GAIN_WIDTH)


def evoked_topography(config: SynthConfig = DEFAULT_SYNTH_CONFIG) -> np.ndarray:
    """
    Signed weight of the phase-locked components on every contact

    A narrow bump minus its mean, normalized to a peak magnitude of 1.
    Contacts sum to zero, so a common average reference leaves it intact.
    """
    bump = _bump(config, _TOPOGRAPHY_WIDTH)
    topography = bump - bump.mean()
    return topography / np.max(np.abs(topography))


def _bump(config: SynthConfig, width: float) -> np.ndarray:
    channels = default_channels(config.n_channels)
    rows = np.array([ch.grid_row for ch in channels], dtype=float)
    cols = np.array([ch.grid_col for ch in channels], dtype=float)
    distance_sq = (rows - _GAIN_CENTRE[0]) ** 2 + (cols - _GAIN_CENTRE[1]) ** 2
    return np.exp(-distance_sq / (2.0 * width ** 2))


def aep_waveform(fs_hz: float, amplitude_uv: float = 1.0) -> np.ndarray:
    """
    Evoked transient sampled from onset to 200 ms

    Args:
        fs_hz: Sampling rate (Hz)
        amplitude_uv: Peak magnitude (μV)

    Returns:
        Waveform whose first sample is the onset; zero before 20 ms
    """
    t = np.arange(int(round(0.2 * fs_hz)) + 1) / fs_hz
    tau = np.clip(t - 0.020, 0.0, None)
    wave = np.exp(-tau / 0.035) * np.sin(2 * np.pi * 8.0 * tau)
    wave += 0.5 * np.exp(-tau / 0.020) * np.sin(2 * np.pi * 25.0 * tau)
    wave[t < 0.020] = 0.0
    return amplitude_uv * wave / np.max(np.abs(wave))


def sustained_waveform(fs_hz: float, amplitude_uv: float = 1.0) -> np.ndarray:
    """
    Phase-locked 4 Hz response over the stimulus, sampled from onset

    The envelope decays from amplitude_uv towards 35% of it, so the first
    stimulus second carries the strongest response. Whole cycles fit every
    second, and the wave starts at zero.
    """
    t = np.arange(int(round(STIMULUS_S * fs_hz))) / fs_hz
    envelope = _ADAPTATION_FLOOR + (1.0 - _ADAPTATION_FLOOR) * np.exp(-t / _ADAPTATION_TAU_S)
    return amplitude_uv * envelope * np.sin(2 * np.pi * SUSTAINED_FREQ_HZ * t)


def _pink_noise(rng: np.random.Generator, n_channels: int, n_samples: int, fs_hz: float, rms_uv: float) -> np.ndarray:
    white = rng.standard_normal((n_channels, n_samples))
    spectrum = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / fs_hz)
    spectrum *= 1.0 / np.maximum(freqs, _PINK_CORNER_HZ)
    noise = np.fft.irfft(spectrum, n=n_samples, axis=1)
    noise -= noise.mean(axis=1, keepdims=True)
    return noise * (rms_uv / noise.std(axis=1, keepdims=True))


def _band_component(noise: np.ndarray, fs_hz: float, band: Tuple[float, float]) -> np.ndarray:
    spectrum = np.fft.rfft(noise, axis=1)
    freqs = np.fft.rfftfreq(noise.shape[1], d=1.0 / fs_hz)
    spectrum[:, (freqs < band[0]) | (freqs > band[1])] = 0.0
    return np.fft.irfft(spectrum, n=noise.shape[1], axis=1)


def _envelope(n_samples: int, fs_hz: float, triggers: List[int], start_s: float, stop_s: float) -> np.ndarray:
    """Raised-cosine gated window for every trigger; zero before each start"""
    envelope = np.zeros(n_samples)
    length = int(round((stop_s - start_s) * fs_hz))
    ramp = int(round(_RAMP_S * fs_hz))
    gate = np.ones(length)
    taper = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    gate[:ramp] = taper
    gate[length - ramp:] = taper[::-1]
    for trigger in triggers:
        start = trigger + int(round(start_s * fs_hz))
        envelope[start:start + length] = gate
    return envelope


def evoked_response(
    config: SynthConfig,
    background: np.ndarray,
    triggers: Sequence[int],
    anesthesia: bool = False,
) -> np.ndarray:
    """
    Everything stimulus-driven that is added to the background

    Args:
        config: Generator configuration
        background: Background noise [C][N]; the band components modulate its
            own band content
        triggers: Stimulus onsets (sample indices)
        anesthesia: Scale the response by the anesthesia factor

    Returns:
        Evoked signal [C][N], exactly zero outside the 4 s after each onset
    """
    fs = config.fs_hz
    n_samples = background.shape[1]
    scale = config.snr * (config.anesthesia_factor if anesthesia else 1.0)

    stim_env = _envelope(n_samples, fs, triggers, 0.0, STIMULUS_S)
    offset_env = _envelope(n_samples, fs, triggers, STIMULUS_S, STIMULUS_S + 1.0)
    bands = stim_env * _band_component(background, fs, STIMULUS_BAND_HZ)
    bands += offset_env * _band_component(background, fs, OFFSET_BAND_HZ)
    bands *= BAND_MODULATION

    locked = np.zeros(n_samples)
    for wave in (
        aep_waveform(fs, config.aep_amplitude_uv * config.early_response_gain),
        sustained_waveform(fs, config.sustained_amplitude_uv),
    ):
        for trigger in triggers:
            stop = min(trigger + len(wave), n_samples)
            locked[trigger:stop] += wave[:stop - trigger]

    gains = spatial_gains(config) * scale
    topography = evoked_topography(config) * scale
    return gains[:, None] * bands + topography[:, None] * locked[None, :]


def generate_day(config: SynthConfig, day_id: int) -> Recording:
    """
    Generate the recording of one experiment day

    Args:
        config: Generator configuration
        day_id: Day identifier (1..n_days)

    Returns:
        Recording with trials_per_day triggers spaced 5 s apart

    Raises:
        ConfigError: If the configuration or day_id is invalid
    """
    config.validate()
    if not 1 <= day_id <= config.n_days:
        raise ConfigError(f"day_id must lie in 1..{config.n_days} (got {day_id})")

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, day_id]))
    fs = config.fs_hz
    trial_length = int(round(TRIAL_S * fs))
    pre = int(round(PRE_STIMULUS_S * fs))
    n_samples = config.trials_per_day * trial_length
    triggers = [pre + k * trial_length for k in range(config.trials_per_day)]

    background = _pink_noise(rng, config.n_channels, n_samples, fs, config.background_rms_uv)
    for ch in sorted(config.noisy_channels):
        background[ch] *= 20.0

    anesthesia = day_id in config.anesthesia_days
    samples = background + evoked_response(config, background, triggers, anesthesia)

    n_artifacts = 0
    burst_length = max(int(round(config.artifact_duration_s * fs)), 3)
    burst = signal.get_window("hann", burst_length, fftbins=False) * config.artifact_amplitude_uv
    for trigger in triggers:
        hit = rng.random() < config.artifact_rate
        position = int(rng.integers(0, trial_length - burst_length + 1))
        channel = int(rng.integers(0, config.n_channels))
        polarity = 1.0 if rng.random() < 0.5 else -1.0
        if hit:
            start = trigger - pre + position
            samples[channel, start:start + burst_length] += polarity * burst
            n_artifacts += 1

    logger.info(
        f"[SynthGen] day {day_id}: {config.trials_per_day} trials, "
        f"{'anesthesia' if anesthesia else 'awake'}, {n_artifacts} artifact bursts"
    )

    return Recording(
        fs_hz=fs,
        channels=default_channels(config.n_channels),
        samples=samples.astype(np.float32).astype(np.float64),
        triggers=triggers,
        condition=Condition.ANESTHESIA if anesthesia else Condition.AWAKE,
        day_id=day_id,
    )


def _write_day(config: SynthConfig, day_id: int, out: Path) -> Path:
    target = out / DAY_DIR_FORMAT.format(day_id=day_id)
    write_dataset(generate_day(config, day_id), target)
    return target


def generate_dataset(
    config: SynthConfig,
    out: Union[str, Path],
    workers: Optional[int] = 1,
) -> List[Path]:
    """
    Generate and write every day of a synthetic dataset

    Args:
        config: Generator configuration
        out: Dataset root; one day directory is written per day
        workers: Parallel processes (results do not depend on this)

    Returns:
        Written day directories in day order
    """
    config.validate()
    root = Path(out)
    day_ids = list(range(1, config.n_days + 1))

    if workers is None or workers <= 1:
        written = [_write_day(config, day_id, root) for day_id in day_ids]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            written = list(pool.map(_write_day, [config] * len(day_ids), day_ids, [root] * len(day_ids)))

    logger.info(f"[SynthGen] wrote {len(written)} days to {root}")
    return written
