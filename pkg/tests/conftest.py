"""Shared fixtures for the workbench test suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from ecog_workbench.config import SynthConfig  # noqa: E402
from ecog_workbench.core.dataset_model import ClassTrial, Recording, default_channels  # noqa: E402
from ecog_workbench.features.synthgen import generate_day  # noqa: E402

FS = 900.0


@pytest.fixture
def small_synth_config():
    """Two short days, no artifacts."""
    return SynthConfig(n_days=2, trials_per_day=12, seed=3, artifact_rate=0.0, anesthesia_days=frozenset({2}))


@pytest.fixture
def synthetic_day(small_synth_config):
    return generate_day(small_synth_config, 1)


@pytest.fixture
def tiny_recording():
    """Four contacts, two triggers, seeded Gaussian samples."""
    rng = np.random.default_rng(0)
    n_trials = 2
    samples = rng.normal(0.0, 10.0, size=(4, n_trials * 4500))
    return Recording(
        fs_hz=FS,
        channels=default_channels(4),
        samples=samples.astype(np.float32).astype(np.float64),
        triggers=(900, 5400),
        day_id=3,
    )


def make_trials(samples, labels, bad=None):
    """ClassTrials from a [n][C][L] array and 1-based labels."""
    bad = bad if bad is not None else [False] * len(labels)
    return [
        ClassTrial(samples=s, label=int(y), epoch_index=1, source_trial=i, bad=bool(b))
        for i, (s, y, b) in enumerate(zip(samples, labels, bad))
    ]
