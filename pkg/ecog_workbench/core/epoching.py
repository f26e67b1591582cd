"""
Epoching

Cuts filtered recordings into 5 s stimulus trials and turns those into the
labeled 1 s class-trials of the 2-class and 3-class datasets.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from ..config import PRE_STIMULUS_S, TRIAL_S
from ..errors import ConfigError
from .dataset_model import ClassTrial, Recording, StimulusTrial

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassScheme:
    """
    Mapping from the five 1 s epochs of a stimulus trial to class labels

    epoch_to_label maps epoch index (1..5) to a label in 1..n_classes, or
    None when the epoch is unused.
    """
    n_classes: int
    epoch_to_label: Tuple[Tuple[int, Optional[int]], ...]
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        mapping = dict(self.epoch_to_label)
        if set(mapping) - set(range(1, TRIAL_S + 1)):
            raise ConfigError(f"epoch indices must lie in 1..{TRIAL_S}")
        produced = {label for label in mapping.values() if label is not None}
        if produced - set(range(1, self.n_classes + 1)):
            raise ConfigError(f"labels {sorted(produced)} outside 1..{self.n_classes}")
        if produced and produced != set(range(1, self.n_classes + 1)):
            raise ConfigError(f"scheme never produces labels {sorted(set(range(1, self.n_classes + 1)) - produced)}")

    def label_for(self, epoch_index: int) -> Optional[int]:
        return dict(self.epoch_to_label).get(epoch_index)

    @classmethod
    def two_class(cls, no_stim_epochs: Sequence[int] = (1, 5)) -> "ClassScheme":
        """
        Signals without (label 1) versus with (label 2) auditory stimulation

        Args:
            no_stim_epochs: Which of the pre-onset (1) and post-offset (5)
                seconds form the no-stimulus class
        """
        if not no_stim_epochs or any(e not in (1, 5) for e in no_stim_epochs):
            raise ConfigError(f"no-stimulus epochs must be a subset of (1, 5) (got {tuple(no_stim_epochs)})")
        mapping: Dict[int, Optional[int]] = {epoch: None for epoch in range(1, TRIAL_S + 1)}
        for epoch in no_stim_epochs:
            mapping[epoch] = 1
        for epoch in (2, 3, 4):
            mapping[epoch] = 2
        return cls(2, tuple(sorted(mapping.items())), ("no-stimulus", "stimulus"))

    @classmethod
    def three_class(cls) -> "ClassScheme":
        """The three stimulus seconds as Response 1, 2 and 3"""
        mapping = ((1, None), (2, 1), (3, 2), (4, 3), (5, None))
        return cls(3, mapping, ("Response 1", "Response 2", "Response 3"))

    @classmethod
    def for_classes(cls, n_classes: int, no_stim_epochs: Sequence[int] = (1, 5)) -> "ClassScheme":
        if n_classes == 2:
            return cls.two_class(no_stim_epochs)
        if n_classes == 3:
            return cls.three_class()
        raise ConfigError(f"n_classes must be 2 or 3 (got {n_classes})")


def class_names(scheme: ClassScheme) -> Tuple[str, ...]:
    """Display names of the scheme's classes"""
    if scheme.names:
        return scheme.names
    return tuple(f"class_{i}" for i in range(1, scheme.n_classes + 1))


def segment_trials(rec: Recording) -> List[StimulusTrial]:
    """
    Cut one 5 s stimulus trial around every trigger

    Args:
        rec: Preprocessed recording

    Returns:
        Stimulus trials in trigger order
    """
    pre = int(round(PRE_STIMULUS_S * rec.fs_hz))
    length = int(round(TRIAL_S * rec.fs_hz))
    trials = [
        StimulusTrial(
            samples=rec.samples[:, trigger - pre:trigger - pre + length],
            fs_hz=rec.fs_hz,
            trigger_offset=pre,
            index=i,
            day_id=rec.day_id,
        )
        for i, trigger in enumerate(rec.triggers)
    ]
    logger.debug(f"[Epoching] day {rec.day_id}: {len(trials)} stimulus trials")
    return trials


def make_class_trials(trials: Sequence[StimulusTrial], scheme: ClassScheme) -> List[ClassTrial]:
    """
    Split stimulus trials into labeled 1 s class-trials

    Output order is chronological: trial order first, then epoch order.

    Args:
        trials: Stimulus trials
        scheme: Epoch-to-label mapping

    Returns:
        Class-trials for every epoch the scheme labels
    """
    class_trials: List[ClassTrial] = []
    for trial in trials:
        epoch_length = int(round(trial.fs_hz))
        for epoch_index in range(1, TRIAL_S + 1):
            label = scheme.label_for(epoch_index)
            if label is None:
                continue
            start = (epoch_index - 1) * epoch_length
            class_trials.append(
                ClassTrial(
                    samples=trial.samples[:, start:start + epoch_length],
                    label=label,
                    epoch_index=epoch_index,
                    source_trial=trial.index,
                )
            )
    return class_trials
