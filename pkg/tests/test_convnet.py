"""Tests for the ConvNet decoder."""

import numpy as np
import pytest

from conftest import make_trials
from ecog_workbench.config import DEFAULT_ARCHITECTURE, ConvNetArchitecture, TrainConfig
from ecog_workbench.decoders.convnet import (
    ConvNetModel,
    TRAINING_LOG_COLUMNS,
    backward,
    build_network,
    check_gradients,
    forward,
    predict_convnet,
    train,
)
from ecog_workbench.decoders.nn_engine import Dense
from ecog_workbench.errors import ConfigError, DataError

TINY_ARCH = ConvNetArchitecture(n_filters=(4, 4, 4, 4), kernel_length=5, pool_length=2, pool_stride=2, dropout=0.2)
N_SAMPLES = 200


def _separable_trials(n_trials, seed):
    """Class 2 carries a 10 Hz oscillation on every channel."""
    rng = np.random.default_rng(seed)
    labels = np.tile([1, 2], n_trials // 2)
    t = np.arange(N_SAMPLES) / 900.0
    samples = rng.normal(size=(n_trials, 4, N_SAMPLES))
    samples[labels == 2] += 3.0 * np.sin(2 * np.pi * 10.0 * t)
    return make_trials(samples, labels)


class TestArchitecture:

    def test_default_dense_input(self):
        assert DEFAULT_ARCHITECTURE.output_length(900) == 6
        net = build_network(DEFAULT_ARCHITECTURE, 16, 900, 2, np.random.default_rng(0))
        dense = net.modules[-1]
        assert isinstance(dense, Dense)
        assert dense.weight.shape == (2, 1200)

    def test_too_short_input(self):
        with pytest.raises(ConfigError):
            build_network(DEFAULT_ARCHITECTURE, 16, 100, 2, np.random.default_rng(0))

    def test_invalid_dropout(self):
        with pytest.raises(ConfigError):
            ConvNetArchitecture(dropout=1.0).validate()


class TestTraining:

    def test_overfits_separable_trials(self):
        trials = _separable_trials(32, seed=41)
        cfg = TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=500, patience=30, seed=5)
        model, log = train(trials[:24], trials[24:], TINY_ARCH, cfg, n_classes=2)
        labels, _ = predict_convnet(model, trials[:24])
        assert np.mean(labels == np.array([t.label for t in trials[:24]])) == 1.0
        assert len(log.records) <= 500
        assert log.phase1_epochs + log.phase2_epochs == len(log.records)

    def test_training_loss_falls_over_first_epochs(self):
        trials = _separable_trials(32, seed=44)
        cfg = TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=10, patience=30, seed=6)
        _, log = train(trials[:24], trials[24:], TINY_ARCH, cfg, n_classes=2)
        losses = [r.train_loss for r in log.records[:10]]
        assert len(losses) == 10
        assert losses[-1] < losses[0]
        assert np.mean(losses[5:]) < np.mean(losses[:5])

    def test_shuffled_labels_stay_near_chance(self):
        rng = np.random.default_rng(45)
        trials = _separable_trials(264, seed=45)
        shuffled = rng.permutation([t.label for t in trials])
        trials = make_trials(np.stack([t.samples for t in trials]), shuffled)
        cfg = TrainConfig(learning_rate=0.01, batch_size=16, max_epochs=20, patience=5, seed=7)
        model, _ = train(trials[:48], trials[48:64], TINY_ARCH, cfg, n_classes=2)
        held_out = trials[64:]
        labels, _ = predict_convnet(model, held_out)
        accuracy = np.mean(labels == np.array([t.label for t in held_out]))
        assert abs(accuracy - 0.5) <= 0.10

    def test_deterministic(self):
        trials = _separable_trials(16, seed=42)
        cfg = TrainConfig(max_epochs=4, batch_size=4, seed=9)
        model_a, log_a = train(trials[:12], trials[12:], TINY_ARCH, cfg, n_classes=2)
        model_b, log_b = train(trials[:12], trials[12:], TINY_ARCH, cfg, n_classes=2)
        assert log_a.records == log_b.records
        np.testing.assert_array_equal(predict_convnet(model_a, trials)[1], predict_convnet(model_b, trials)[1])

    def test_phase_one_stops_on_patience(self):
        trials = _separable_trials(16, seed=43)
        cfg = TrainConfig(max_epochs=50, patience=1, batch_size=4, seed=1)
        _, log = train(trials[:12], trials[12:], TINY_ARCH, cfg, n_classes=2)
        assert log.phase1_epochs < 50
        assert 1 <= log.best_epoch <= log.phase1_epochs
        assert all(r.phase == 1 for r in log.records[:log.phase1_epochs])
        assert all(r.phase == 2 for r in log.records[log.phase1_epochs:])

    def test_empty_validation(self):
        with pytest.raises(DataError):
            train(_separable_trials(8, seed=44), [], TINY_ARCH)

    def test_training_log_csv(self, tmp_path):
        trials = _separable_trials(12, seed=45)
        _, log = train(trials[:8], trials[8:], TINY_ARCH, TrainConfig(max_epochs=2, batch_size=4), n_classes=2)
        path = tmp_path / "log.csv"
        log.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(TRAINING_LOG_COLUMNS)
        assert len(lines) == len(log.records) + 1


class TestModel:

    @pytest.fixture
    def trained(self):
        trials = _separable_trials(12, seed=46)
        model, _ = train(trials[:8], trials[8:], TINY_ARCH, TrainConfig(max_epochs=3, batch_size=4), n_classes=2)
        return model, trials

    def test_probabilities_sum_to_one(self, trained):
        model, trials = trained
        probs = forward(model, np.stack([t.samples for t in trials]))
        assert probs.shape == (12, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_save_and_load(self, trained, tmp_path):
        model, trials = trained
        path = tmp_path / "model.npz"
        model.save(path)
        restored = ConvNetModel.load(path)
        np.testing.assert_allclose(predict_convnet(restored, trials)[1], predict_convnet(model, trials)[1])

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            ConvNetModel.load(tmp_path / "absent.npz")

    def test_input_shape_checked(self, trained):
        model, _ = trained
        with pytest.raises(DataError):
            forward(model, np.zeros((1, 3, N_SAMPLES)))

    def test_backward_returns_named_gradients(self, trained):
        model, trials = trained
        batch = np.stack([t.samples for t in trials[:4]])
        loss, grads = backward(model, batch, [t.label for t in trials[:4]])
        assert loss > 0
        assert set(grads) == {p.name for p in model.network.parameters()}

    def test_gradient_check(self, trained):
        model, trials = trained
        batch = np.stack([t.samples for t in trials[:4]])
        errors = check_gradients(model, batch, [t.label for t in trials[:4]])
        assert max(errors.values()) < 1e-4

    def test_predict_empty(self, trained):
        model, _ = trained
        labels, probs = predict_convnet(model, [])
        assert labels.shape == (0,)
        assert probs.shape == (0, 2)
