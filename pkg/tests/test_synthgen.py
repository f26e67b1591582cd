"""Tests for the synthetic recording generator."""

from dataclasses import replace

import numpy as np
import pytest

from ecog_workbench.config import Condition, SynthConfig
from ecog_workbench.core.dataset_model import list_days, read_dataset
from ecog_workbench.core.epoching import ClassScheme, make_class_trials, segment_trials
from ecog_workbench.core.preprocess import flag_bad_trials, preprocess_recording
from ecog_workbench.errors import ConfigError
from ecog_workbench.features.synthgen import (
    aep_waveform,
    evoked_response,
    evoked_topography,
    generate_dataset,
    generate_day,
    spatial_gains,
    sustained_waveform,
)


class TestGenerateDay:

    def test_layout(self, synthetic_day):
        assert synthetic_day.n_channels == 16
        assert synthetic_day.n_samples == 12 * 4500
        assert synthetic_day.triggers[:3] == (900, 5400, 9900)
        assert synthetic_day.condition == Condition.AWAKE

    def test_deterministic(self, small_synth_config):
        a = generate_day(small_synth_config, 1)
        b = generate_day(small_synth_config, 1)
        assert a == b

    def test_days_differ(self, small_synth_config):
        a = generate_day(small_synth_config, 1)
        b = generate_day(small_synth_config, 2)
        assert not np.array_equal(a.samples, b.samples)

    def test_seed_changes_output(self, small_synth_config):
        a = generate_day(small_synth_config, 1)
        b = generate_day(replace(small_synth_config, seed=4), 1)
        assert not np.array_equal(a.samples, b.samples)

    def test_anesthesia_day(self, small_synth_config):
        assert generate_day(small_synth_config, 2).condition == Condition.ANESTHESIA

    def test_no_artifacts_below_threshold(self, synthetic_day):
        assert np.max(np.abs(synthetic_day.samples)) < 800.0

    def test_artifact_rate_flags_bad_trials(self, small_synth_config):
        config = replace(small_synth_config, trials_per_day=60, artifact_rate=0.02)
        processed = preprocess_recording(generate_day(config, 1)).recording
        trials = flag_bad_trials(
            make_class_trials(segment_trials(processed), ClassScheme.two_class()), 800.0
        )
        assert sum(t.bad for t in trials) / len(trials) <= 0.10

    def test_samples_are_float32_exact(self, synthetic_day):
        np.testing.assert_array_equal(synthetic_day.samples.astype(np.float32).astype(np.float64), synthetic_day.samples)

    def test_day_out_of_range(self, small_synth_config):
        with pytest.raises(ConfigError):
            generate_day(small_synth_config, 3)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            generate_day(SynthConfig(artifact_rate=1.5), 1)


class TestComponents:

    def test_gains_bounded(self):
        gains = spatial_gains()
        assert gains.shape == (16,)
        assert np.all(gains >= 0.25) and np.all(gains <= 1.0)
        assert np.argmax(gains) in (5, 6)

    def test_aep_confined_to_early_window(self):
        wave = aep_waveform(900.0, 120.0)
        assert len(wave) == 181
        assert np.all(wave[:18] == 0.0)
        assert np.max(np.abs(wave)) == pytest.approx(120.0)

    def test_evoked_topography_recovered(self, small_synth_config):
        """Averaged evoked peak follows the signed phase-locked topography."""
        config = replace(small_synth_config, trials_per_day=40)
        trials = segment_trials(generate_day(config, 1))
        aep = np.mean([t.samples for t in trials], axis=0)
        aep -= aep[:, 800:900].mean(axis=1, keepdims=True)
        peak = 900 + int(np.argmax(aep_waveform(config.fs_hz)))
        assert np.corrcoef(aep[:, peak], evoked_topography(config))[0, 1] > 0.9

    def test_topography_survives_common_average(self):
        topography = evoked_topography()
        assert topography.sum() == pytest.approx(0.0, abs=1e-12)
        assert np.max(np.abs(topography)) == pytest.approx(1.0)
        assert np.argmax(topography) == 6
        assert topography.min() < 0

    def test_sustained_response_adapts(self):
        wave = sustained_waveform(900.0, 60.0)
        assert len(wave) == 2700
        assert wave[0] == 0.0
        per_second = np.abs(wave).reshape(3, 900).mean(axis=1)
        assert per_second[0] > per_second[1] > per_second[2] > 0.3 * per_second[0]

    def test_evoked_zero_before_onset(self, small_synth_config):
        rng = np.random.default_rng(8)
        background = rng.normal(0.0, 50.0, size=(16, 4 * 4500))
        triggers = [900 + k * 4500 for k in range(4)]
        evoked = evoked_response(small_synth_config, background, triggers)
        for trigger in triggers:
            assert np.all(evoked[:, trigger - 900:trigger] == 0.0)
            assert np.any(evoked[:, trigger:trigger + 3600] != 0.0)


class TestGenerateDataset:

    def test_writes_one_directory_per_day(self, small_synth_config, tmp_path):
        written = generate_dataset(small_synth_config, tmp_path)
        assert [p.name for p in written] == ["day01", "day02"]
        assert list_days(tmp_path) == written
        assert read_dataset(written[0]) == generate_day(small_synth_config, 1)

    def test_worker_count_does_not_change_output(self, small_synth_config, tmp_path):
        serial = generate_dataset(small_synth_config, tmp_path / "serial", workers=1)
        parallel = generate_dataset(small_synth_config, tmp_path / "parallel", workers=2)
        for a, b in zip(serial, parallel):
            assert (a / "samples.f32").read_bytes() == (b / "samples.f32").read_bytes()
