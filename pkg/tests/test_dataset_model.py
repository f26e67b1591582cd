"""Tests for the recording types and the on-disk dataset format."""

import json

import numpy as np
import pytest

from ecog_workbench.config import MANIFEST_FILE, SAMPLES_FILE, Condition
from ecog_workbench.core.dataset_model import (
    ClassTrial,
    Recording,
    StimulusTrial,
    default_channels,
    list_days,
    read_dataset,
    read_manifest,
    write_dataset,
)
from ecog_workbench.errors import DataError, InvariantError


class TestRecordingInvariants:

    def test_grid_layout_is_row_major(self):
        channels = default_channels(16)
        assert (channels[5].grid_row, channels[5].grid_col) == (1, 1)
        assert (channels[15].grid_row, channels[15].grid_col) == (3, 3)

    def test_trigger_too_early(self):
        with pytest.raises(InvariantError):
            Recording(fs_hz=900.0, channels=default_channels(2), samples=np.zeros((2, 9000)), triggers=(100,))

    def test_trigger_too_late(self):
        with pytest.raises(InvariantError):
            Recording(fs_hz=900.0, channels=default_channels(2), samples=np.zeros((2, 9000)), triggers=(6000,))

    def test_row_count_mismatch(self):
        with pytest.raises(InvariantError):
            Recording(fs_hz=900.0, channels=default_channels(3), samples=np.zeros((2, 9000)), triggers=())

    def test_samples_are_read_only(self, tiny_recording):
        with pytest.raises(ValueError):
            tiny_recording.samples[0, 0] = 1.0

    def test_usable_channels(self, tiny_recording):
        rec = tiny_recording.with_exclusions([False, True, False, False])
        usable = rec.usable_channels()
        assert usable.n_channels == 3
        assert [ch.index for ch in usable.channels] == [0, 2, 3]
        np.testing.assert_array_equal(usable.samples, tiny_recording.samples[[0, 2, 3]])

    def test_properties(self, tiny_recording):
        assert tiny_recording.n_samples == 9000
        assert tiny_recording.duration_s == pytest.approx(10.0)


class TestTrialTypes:

    def test_stimulus_trial_length(self):
        with pytest.raises(InvariantError):
            StimulusTrial(samples=np.zeros((2, 4000)), fs_hz=900.0, trigger_offset=900)

    def test_class_trial_label(self):
        with pytest.raises(InvariantError):
            ClassTrial(samples=np.zeros((2, 900)), label=0, epoch_index=1, source_trial=0)

    def test_class_trial_epoch_range(self):
        with pytest.raises(InvariantError):
            ClassTrial(samples=np.zeros((2, 900)), label=1, epoch_index=6, source_trial=0)


class TestDatasetFiles:

    def test_round_trip(self, tiny_recording, tmp_path):
        rec = tiny_recording.with_exclusions([False, False, True, False])
        write_dataset(rec, tmp_path / "day03")
        loaded = read_dataset(tmp_path / "day03")
        assert loaded == rec
        assert loaded.condition == Condition.AWAKE
        assert loaded.channels[2].excluded

    def test_sample_file_is_float32_channel_major(self, tiny_recording, tmp_path):
        write_dataset(tiny_recording, tmp_path)
        raw = np.fromfile(tmp_path / SAMPLES_FILE, dtype="<f4")
        assert raw.size == 4 * 9000
        np.testing.assert_array_equal(raw[:9000], tiny_recording.samples[0].astype(np.float32))

    def test_truncated_samples(self, tiny_recording, tmp_path):
        write_dataset(tiny_recording, tmp_path)
        data = (tmp_path / SAMPLES_FILE).read_bytes()
        (tmp_path / SAMPLES_FILE).write_bytes(data[:-4])
        with pytest.raises(DataError, match="bytes"):
            read_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset(tmp_path)

    def test_wrong_version(self, tiny_recording, tmp_path):
        write_dataset(tiny_recording, tmp_path)
        manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
        manifest["version"] = 99
        (tmp_path / MANIFEST_FILE).write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="version"):
            read_manifest(tmp_path)

    def test_invariant_violation_is_reported(self, tiny_recording, tmp_path):
        write_dataset(tiny_recording, tmp_path)
        manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
        manifest["triggers"] = [10]
        (tmp_path / MANIFEST_FILE).write_text(json.dumps(manifest))
        with pytest.raises(DataError):
            read_dataset(tmp_path)

    def test_list_days_sorted_by_day_id(self, tiny_recording, tmp_path):
        from dataclasses import replace

        for day in (10, 2, 1):
            write_dataset(replace(tiny_recording, day_id=day), tmp_path / f"day{day:02d}")
        (tmp_path / "notes").mkdir()
        days = list_days(tmp_path)
        assert [p.name for p in days] == ["day01", "day02", "day10"]

    def test_list_days_accepts_day_directory(self, tiny_recording, tmp_path):
        write_dataset(tiny_recording, tmp_path / "day03")
        assert list_days(tmp_path / "day03") == [tmp_path / "day03"]
