"""Tests for the filter bank CSP decoder."""

import json
import warnings

import numpy as np
import pytest

from conftest import make_trials
from ecog_workbench.config import DEFAULT_BANDS, FbcspConfig
from ecog_workbench.core.epoching import ClassScheme, make_class_trials, segment_trials
from ecog_workbench.core.evaluation import chronological_split
from ecog_workbench.core.preprocess import preprocess_recording
from ecog_workbench.decoders.fbcsp import (
    CspModel,
    FilterBank,
    _csp_decomposition,
    fit_csp,
    fit_fbcsp,
    logvar_features,
    predict_fbcsp,
    predict_fbcsp_batch,
)
from ecog_workbench.errors import ConfigError, DataError, RankDeficiencyWarning


def _class_covariance(trials):
    """Mean of trace-normalized per-trial covariances."""
    covs = []
    for samples in trials:
        centred = samples - samples.mean(axis=1, keepdims=True)
        cov = centred @ centred.T / samples.shape[1]
        covs.append(cov / np.trace(cov))
    return np.mean(covs, axis=0)


def _mixed_trials(rng, mixing, n_trials, length=900):
    return [mixing @ rng.normal(size=(mixing.shape[1], length)) for _ in range(n_trials)]


@pytest.fixture
def two_class_trials():
    rng = np.random.default_rng(21)
    a = _mixed_trials(rng, np.array([[3.0, 0.2, 0.0], [0.5, 1.0, 0.0], [0.0, 0.3, 0.5]]), 20)
    b = _mixed_trials(rng, np.array([[0.4, 0.0, 0.1], [0.2, 1.0, 0.0], [0.1, 0.6, 2.5]]), 20)
    return a, b


class TestCsp:

    def test_filters_are_extremal(self, two_class_trials):
        a, b = two_class_trials
        w = fit_csp(a, b, m=1)
        cov_a, cov_b = _class_covariance(a), _class_covariance(b)

        def ratio(v):
            return np.einsum("...i,ij,...j->...", v, cov_a, v) / np.einsum("...i,ij,...j->...", v, cov_a + cov_b, v)

        directions = np.random.default_rng(22).normal(size=(10_000, 3))
        ratios = ratio(directions)
        assert ratio(w[0]) >= ratios.max() - 1e-6
        assert ratio(w[1]) <= ratios.min() + 1e-6

    def test_composite_normalization(self, two_class_trials):
        a, b = two_class_trials
        eigenvalues, filters = _csp_decomposition(_class_covariance(a), _class_covariance(b))
        composite = _class_covariance(a) + _class_covariance(b)
        np.testing.assert_allclose(filters @ composite @ filters.T, np.eye(3), atol=1e-9)
        assert np.all(np.diff(eigenvalues) <= 0)

    def test_equal_covariances_give_half(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        eigenvalues, _ = _csp_decomposition(cov, cov)
        np.testing.assert_allclose(eigenvalues, 0.5)

    def test_too_many_pairs(self, two_class_trials):
        a, b = two_class_trials
        with pytest.raises(ConfigError):
            fit_csp(a, b, m=2)

    def test_too_few_trials(self, two_class_trials):
        a, b = two_class_trials
        with pytest.raises(DataError):
            fit_csp(a[:1], b, m=1)

    def test_rank_deficiency_after_car(self):
        rng = np.random.default_rng(23)
        trials = [rng.normal(size=(6, 900)) for _ in range(10)]
        referenced = [t - t.mean(axis=0, keepdims=True) for t in trials]
        with pytest.warns(RankDeficiencyWarning):
            w = fit_csp(referenced[:5], referenced[5:], m=2)
        assert np.all(np.isfinite(w))


class TestFeatures:

    def test_forty_eight_features(self):
        rng = np.random.default_rng(24)
        bank = FilterBank(DEFAULT_BANDS)
        filters = [rng.normal(size=(6, 16)) for _ in range(bank.n_bands)]
        features = logvar_features(rng.normal(size=(16, 900)), filters, bank)
        assert features.shape == (48,)
        assert np.all(np.isfinite(features))

    def test_filter_set_count_must_match_bands(self):
        bank = FilterBank(DEFAULT_BANDS[:2])
        with pytest.raises(DataError):
            logvar_features(np.zeros((3, 900)), [np.eye(3)], bank)

    def test_variance_floor(self):
        bank = FilterBank(DEFAULT_BANDS[:1])
        features = logvar_features(np.zeros((2, 900)), [np.eye(2)], bank, variance_floor=1e-12)
        np.testing.assert_allclose(features, np.log(1e-12))


def _decoding_trials(recording, n_classes):
    processed = preprocess_recording(recording).recording.usable_channels()
    trials = make_class_trials(segment_trials(processed), ClassScheme.for_classes(n_classes))
    return chronological_split(trials).select(trials)


class TestFitFbcsp:

    @pytest.mark.parametrize("n_classes", [2, 3])
    def test_fit_and_predict(self, synthetic_day, n_classes):
        train, validation, test = _decoding_trials(synthetic_day, n_classes)
        cfg = FbcspConfig(m_candidates=(1, 2))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            model = fit_fbcsp(train, validation, n_classes, cfg)
        assert model.classes == tuple(range(1, n_classes + 1))
        assert model.n_pairs in (1, 2)
        assert len(model.classifiers) == (1 if n_classes == 2 else 3)

        labels, scores = predict_fbcsp_batch(model, test)
        assert scores.shape == (len(test), n_classes)
        assert set(labels.tolist()) <= set(model.classes)
        label, single = predict_fbcsp(model, test[0])
        assert label == labels[0]
        np.testing.assert_allclose(single, scores[0])

    def test_serialization(self, synthetic_day):
        train, validation, test = _decoding_trials(synthetic_day, 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            model = fit_fbcsp(train, validation, 2, FbcspConfig(m_candidates=(2,)))
        restored = CspModel.from_dict(json.loads(json.dumps(model.to_dict())))
        np.testing.assert_allclose(predict_fbcsp_batch(restored, test)[1], predict_fbcsp_batch(model, test)[1])

    def test_channel_permutation_and_scaling(self):
        rng = np.random.default_rng(23)
        a = _mixed_trials(rng, np.array([[3.0, 0.2, 0.0], [0.5, 1.0, 0.0], [0.0, 0.3, 0.5]]), 30)
        b = _mixed_trials(rng, np.array([[0.4, 0.0, 0.1], [0.2, 1.0, 0.0], [0.1, 0.6, 2.5]]), 30)
        samples = np.stack([trial for pair in zip(a, b) for trial in pair])
        labels = [1, 2] * 30
        cfg = FbcspConfig(m_candidates=(1,))

        def fit_and_predict(data):
            trials = make_trials(data, labels)
            model = fit_fbcsp(trials[:40], trials[40:50], 2, cfg)
            return predict_fbcsp_batch(model, trials[50:])[0]

        reference = fit_and_predict(samples)
        np.testing.assert_array_equal(fit_and_predict(samples[:, [2, 0, 1]]), reference)
        np.testing.assert_array_equal(fit_and_predict(7.5 * samples), reference)
        assert np.mean(reference == np.array(labels[50:])) >= 0.9

    def test_class_with_too_few_trials(self):
        rng = np.random.default_rng(25)
        trials = make_trials(rng.normal(size=(6, 4, 900)), [1, 1, 1, 1, 1, 2])
        with pytest.raises(DataError):
            fit_fbcsp(trials, trials[:2], 2)

    def test_invalid_class_count(self):
        with pytest.raises(ConfigError):
            fit_fbcsp([], [], 4)

    def test_malformed_model(self):
        with pytest.raises(DataError):
            CspModel.from_dict({"bands": [[8, 13]]})
