"""
Dataset Model

Core data types shared by every stage of the pipeline and the on-disk
dataset format:
- Recording: continuous multichannel signal with stimulus triggers
- ChannelMeta: contact id, grid position and exclusion flag
- StimulusTrial: one 5 s stimulus-locked segment
- ClassTrial: one labeled 1 s epoch (the decoder input)

On disk a recording is a directory with manifest.json (metadata) and
samples.f32 (little-endian float32, channel-major, μV).
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from ..config import (
    Condition,
    GRID_COLUMNS,
    MANIFEST_FILE,
    MANIFEST_VERSION,
    POST_STIMULUS_S,
    PRE_STIMULUS_S,
    SAMPLES_FILE,
    STIMULUS_S,
    TRIAL_S,
)
from ..errors import DataError, InvariantError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Samples after onset that every trigger needs (stimulus + post-stimulus)
_POST_ONSET_S = STIMULUS_S + POST_STIMULUS_S


def _frozen_array(values: Any, ndim: int, name: str) -> np.ndarray:
    array = np.ascontiguousarray(values, dtype=np.float64)
    if array is values and array.flags.writeable:
        # Never freeze the caller's own buffer
        array = array.copy()
    if array.ndim != ndim:
        raise InvariantError(f"{name} must be {ndim}-D (got shape {array.shape})")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ChannelMeta:
    """One electrode contact of the array"""
    index: int
    grid_row: int
    grid_col: int
    excluded: bool = False


def default_channels(n_channels: int) -> Tuple[ChannelMeta, ...]:
    """
    Row-major contact layout on the array grid

    Args:
        n_channels: Number of contacts

    Returns:
        Tuple of ChannelMeta with contact i at (i // 4, i % 4)
    """
    return tuple(
        ChannelMeta(index=i, grid_row=i // GRID_COLUMNS, grid_col=i % GRID_COLUMNS)
        for i in range(n_channels)
    )


@dataclass(frozen=True, eq=False)
class Recording:
    """
    Continuous recording of one experiment day

    samples is a read-only [channel][time] float64 array in μV. Every trigger
    has 1 s of signal before it and 4 s (stimulus + post-stimulus) after it.
    """
    fs_hz: float
    channels: Tuple[ChannelMeta, ...]
    samples: np.ndarray
    triggers: Tuple[int, ...]
    condition: Condition = Condition.AWAKE
    day_id: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "triggers", tuple(int(t) for t in self.triggers))
        object.__setattr__(self, "samples", _frozen_array(self.samples, 2, "samples"))
        object.__setattr__(self, "condition", Condition(self.condition))
        self.validate()

    def validate(self) -> None:
        """
        Check all Recording invariants

        Raises:
            InvariantError: If any invariant does not hold
        """
        if not self.fs_hz > 0:
            raise InvariantError(f"fs_hz must be > 0 (got {self.fs_hz})")
        if self.samples.shape[0] != len(self.channels):
            raise InvariantError(
                f"{self.samples.shape[0]} sample rows for {len(self.channels)} channels"
            )
        if len({ch.index for ch in self.channels}) != len(self.channels):
            raise InvariantError("channel indices are not unique")
        if len({(ch.grid_row, ch.grid_col) for ch in self.channels}) != len(self.channels):
            raise InvariantError("channel grid positions are not unique")
        if self.day_id < 1:
            raise InvariantError(f"day_id must be >= 1 (got {self.day_id})")

        n_samples = self.samples.shape[1]
        for trigger in self.triggers:
            if trigger < self.fs_hz:
                raise InvariantError(
                    f"trigger at sample {trigger} leaves less than 1 s before onset"
                )
            if trigger + _POST_ONSET_S * self.fs_hz > n_samples:
                raise InvariantError(
                    f"trigger at sample {trigger} leaves less than {_POST_ONSET_S} s "
                    f"after onset ({n_samples} samples recorded)"
                )

    # ------------------------------------------------------------------
    # Convenience properties
    # ------------------------------------------------------------------

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz

    @property
    def excluded_mask(self) -> np.ndarray:
        return np.array([ch.excluded for ch in self.channels], dtype=bool)

    def with_samples(self, samples: np.ndarray) -> "Recording":
        """Copy of this recording with new sample values"""
        return replace(self, samples=samples)

    def with_exclusions(self, mask: Sequence[bool]) -> "Recording":
        """Copy of this recording with the excluded flag set from mask"""
        channels = tuple(replace(ch, excluded=bool(flag)) for ch, flag in zip(self.channels, mask))
        return replace(self, channels=channels)

    def usable_channels(self) -> "Recording":
        """Copy restricted to contacts that are not excluded"""
        return self.select_channels(~self.excluded_mask)

    def select_channels(self, mask: Sequence[bool]) -> "Recording":
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != (self.n_channels,):
            raise InvariantError(f"channel mask of shape {keep.shape} for {self.n_channels} channels")
        channels = tuple(ch for ch, flag in zip(self.channels, keep) if flag)
        return replace(self, channels=channels, samples=self.samples[keep])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.fs_hz == other.fs_hz
            and self.channels == other.channels
            and self.triggers == other.triggers
            and self.condition == other.condition
            and self.day_id == other.day_id
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )

    def __repr__(self) -> str:
        return (
            f"Recording(day_id={self.day_id}, condition={self.condition.value}, "
            f"n_channels={self.n_channels}, n_samples={self.n_samples}, "
            f"fs_hz={self.fs_hz}, n_triggers={len(self.triggers)})"
        )


@dataclass(frozen=True, eq=False)
class StimulusTrial:
    """5 s stimulus-locked segment: 1 s pre, 3 s stimulus, 1 s post"""
    samples: np.ndarray
    fs_hz: float
    trigger_offset: int
    index: int = 0
    day_id: int = 1

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, 2, "trial samples"))
        expected = int(round(TRIAL_S * self.fs_hz))
        if self.samples.shape[1] != expected:
            raise InvariantError(
                f"stimulus trial has {self.samples.shape[1]} samples (expected {expected})"
            )
        if self.trigger_offset != int(round(PRE_STIMULUS_S * self.fs_hz)):
            raise InvariantError(f"trigger_offset {self.trigger_offset} is not 1 s into the trial")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True, eq=False)
class ClassTrial:
    """
    One labeled 1 s epoch

    epoch_index counts the five seconds of the source StimulusTrial (1..5);
    source_trial is that trial's index. bad marks amplitude-rule violations.
    """
    samples: np.ndarray
    label: int
    epoch_index: int
    source_trial: int
    bad: bool = False

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, 2, "class-trial samples"))
        if self.label < 1:
            raise InvariantError(f"class label must be >= 1 (got {self.label})")
        if not 1 <= self.epoch_index <= TRIAL_S:
            raise InvariantError(f"epoch_index must lie in 1..{TRIAL_S} (got {self.epoch_index})")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


# ============================================================================
# On-disk format
# ============================================================================

def write_dataset(recording: Recording, path: PathLike) -> None:
    """
    Write a recording as manifest.json + samples.f32

    Args:
        recording: Recording to persist
        path: Target directory (created if missing)

    Raises:
        InvariantError: If the recording violates its invariants
        DataError: On I/O failure
    """
    recording.validate()
    directory = Path(path)

    as_f32 = recording.samples.astype("<f4")
    if not np.array_equal(as_f32.astype(np.float64), recording.samples):
        logger.warning(
            f"[Dataset] day {recording.day_id}: samples rounded to float32 on write"
        )

    manifest = {
        "version": MANIFEST_VERSION,
        "fs_hz": recording.fs_hz,
        "n_channels": recording.n_channels,
        "n_samples": recording.n_samples,
        "channels": [
            {
                "index": ch.index,
                "grid_row": ch.grid_row,
                "grid_col": ch.grid_col,
                "excluded": ch.excluded,
            }
            for ch in recording.channels
        ],
        "triggers": list(recording.triggers),
        "condition": recording.condition.value,
        "day_id": recording.day_id,
    }

    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)
        as_f32.tofile(directory / SAMPLES_FILE)
    except OSError as e:
        raise DataError(f"failed to write dataset to {directory}: {e}") from e

    logger.debug(f"[Dataset] wrote {recording!r} to {directory}")


def read_manifest(path: PathLike) -> Dict[str, Any]:
    """
    Load and structurally check manifest.json

    Args:
        path: Dataset directory

    Returns:
        Parsed manifest dictionary

    Raises:
        DataError: If the manifest is missing, malformed or of another version
    """
    manifest_path = Path(path) / MANIFEST_FILE
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"no {MANIFEST_FILE} in {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"malformed manifest {manifest_path}: {e}") from e

    if not isinstance(manifest, dict):
        raise DataError(f"malformed manifest {manifest_path}: not a JSON object")

    required = ("version", "fs_hz", "n_channels", "n_samples", "channels", "triggers", "condition", "day_id")
    missing = [key for key in required if key not in manifest]
    if missing:
        raise DataError(f"malformed manifest {manifest_path}: missing {', '.join(missing)}")
    if manifest["version"] != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest['version']} in {manifest_path}")
    return manifest


def read_dataset(path: PathLike) -> Recording:
    """
    Load a recording written by write_dataset

    Args:
        path: Dataset directory

    Returns:
        Recording with all invariants validated

    Raises:
        DataError: Malformed manifest, sample-file length mismatch or invariant violation
    """
    directory = Path(path)
    manifest = read_manifest(directory)

    try:
        n_channels = int(manifest["n_channels"])
        n_samples = int(manifest["n_samples"])
        channels = tuple(
            ChannelMeta(
                index=int(entry["index"]),
                grid_row=int(entry["grid_row"]),
                grid_col=int(entry["grid_col"]),
                excluded=bool(entry.get("excluded", False)),
            )
            for entry in manifest["channels"]
        )
        condition = Condition(manifest["condition"])
        fs_hz = float(manifest["fs_hz"])
        triggers = tuple(int(t) for t in manifest["triggers"])
        day_id = int(manifest["day_id"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed manifest in {directory}: {e}") from e

    if len(channels) != n_channels:
        raise DataError(f"manifest lists {len(channels)} channels but n_channels={n_channels}")

    samples_path = directory / SAMPLES_FILE
    expected_bytes = n_channels * n_samples * 4
    try:
        actual_bytes = samples_path.stat().st_size
    except OSError as e:
        raise DataError(f"cannot read {samples_path}: {e}") from e
    if actual_bytes != expected_bytes:
        raise DataError(
            f"{samples_path} holds {actual_bytes} bytes, expected {expected_bytes} "
            f"({n_channels} channels x {n_samples} samples x 4 bytes)"
        )

    raw = np.fromfile(samples_path, dtype="<f4").reshape(n_channels, n_samples)
    return Recording(
        fs_hz=fs_hz,
        channels=channels,
        samples=raw.astype(np.float64),
        triggers=triggers,
        condition=condition,
        day_id=day_id,
    )


def list_days(root: PathLike) -> List[Path]:
    """
    Find day directories below a dataset root

    Args:
        root: Directory holding one sub-directory per experiment day,
              or a single day directory

    Returns:
        Day directories sorted by day_id
    """
    root_path = Path(root)
    if (root_path / MANIFEST_FILE).exists():
        return [root_path]
    if not root_path.is_dir():
        raise DataError(f"dataset root {root_path} is not a directory")

    days: List[Tuple[int, Path]] = []
    for candidate in sorted(root_path.iterdir()):
        if candidate.is_dir() and (candidate / MANIFEST_FILE).exists():
            days.append((int(read_manifest(candidate)["day_id"]), candidate))
    days.sort(key=lambda item: item[0])
    return [path for _, path in days]
