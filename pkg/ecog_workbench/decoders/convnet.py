"""
ConvNet Decoder

Four Conv-Pool blocks on [channel][time] class-trials:
- block 1: temporal convolution, spatial convolution across all channels,
  batch norm, ELU, max-pool
- blocks 2-4: dropout, temporal convolution, batch norm, ELU, max-pool
- dense layer to the class logits, softmax

Training uses Adam with two-phase early stopping: phase 1 tracks the best
validation accuracy on the training split and restores it after `patience`
epochs without improvement; phase 2 continues on train + validation until
the validation loss reaches the best phase-1 training loss or the epoch
budget is used up. All randomness (initialization, shuffling, dropout)
derives from TrainConfig.seed.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import (
    DEFAULT_ARCHITECTURE,
    DEFAULT_TRAIN_CONFIG,
    ConvNetArchitecture,
    TrainConfig,
)
from ..core.dataset_model import ClassTrial
from ..errors import ConfigError, DataError
from .nn_engine import (
    Adam,
    BatchNorm,
    Conv1d,
    Dense,
    Dropout,
    ELU,
    Flatten,
    MaxPool,
    Sequential,
    SoftmaxCrossEntropy,
    SpatialConv,
    TemporalConv,
    gradient_check,
    probabilities,
)

logger = logging.getLogger(__name__)

TRAINING_LOG_COLUMNS = ("epoch", "phase", "train_loss", "val_loss", "val_acc")

# Trials per forward pass when predicting
_EVAL_BATCH = 64


def build_network(
    arch: ConvNetArchitecture,
    n_channels: int,
    n_samples: int,
    n_classes: int,
    rng: np.random.Generator,
) -> Sequential:
    """
    Assemble the Conv-Pool network

    Args:
        arch: Layer layout
        n_channels: Recording channels of the input
        n_samples: Samples per class-trial
        n_classes: Output classes
        rng: Source of initial weights and dropout masks

    Returns:
        Sequential network producing logits

    Raises:
        ConfigError: If the layout leaves no samples for the dense layer
    """
    arch.validate(n_samples)
    first = arch.n_filters[0]
    net = Sequential([
        TemporalConv(first, arch.kernel_length, rng, name="block1.temporal"),
        SpatialConv(first, n_channels, first, rng, name="block1.spatial"),
        BatchNorm(first, arch.batch_norm_eps, arch.batch_norm_momentum, name="block1.bn"),
        ELU(),
        MaxPool(arch.pool_length, arch.pool_stride),
    ])
    previous = first
    for block, filters in enumerate(arch.n_filters[1:], start=2):
        net.add(Dropout(arch.dropout, rng))
        net.add(Conv1d(previous, filters, arch.kernel_length, rng, name=f"block{block}.conv"))
        net.add(BatchNorm(filters, arch.batch_norm_eps, arch.batch_norm_momentum, name=f"block{block}.bn"))
        net.add(ELU())
        net.add(MaxPool(arch.pool_length, arch.pool_stride))
        previous = filters
    net.add(Flatten())
    net.add(Dense(previous * arch.output_length(n_samples), n_classes, rng, name="head.dense"))
    return net


# ============================================================================
# Model
# ============================================================================

@dataclass
class ConvNetModel:
    """Trained network with its input standardization"""
    arch: ConvNetArchitecture
    network: Sequential
    n_channels: int
    n_samples: int
    n_classes: int
    channel_mean: np.ndarray
    channel_std: np.ndarray

    def standardize(self, batch: np.ndarray) -> np.ndarray:
        if batch.ndim != 3 or batch.shape[1:] != (self.n_channels, self.n_samples):
            raise DataError(
                f"model expects [B][{self.n_channels}][{self.n_samples}] input (got {batch.shape})"
            )
        return (batch - self.channel_mean[None, :, None]) / self.channel_std[None, :, None]

    def save(self, path: Union[str, Path]) -> None:
        """Write parameters, running statistics and layout to a .npz archive"""
        meta = {
            "arch": asdict(self.arch),
            "n_channels": self.n_channels,
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
        }
        arrays = {f"state/{name}": values for name, values in self.network.state_dict().items()}
        try:
            with open(path, "wb") as f:
                np.savez(
                    f,
                    meta=np.array(json.dumps(meta, sort_keys=True)),
                    channel_mean=self.channel_mean,
                    channel_std=self.channel_std,
                    **arrays,
                )
        except OSError as e:
            raise DataError(f"failed to write checkpoint {path}: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ConvNetModel":
        try:
            with np.load(path, allow_pickle=False) as archive:
                meta = json.loads(archive["meta"].item())
                state = {key[len("state/"):]: archive[key] for key in archive.files if key.startswith("state/")}
                channel_mean = archive["channel_mean"]
                channel_std = archive["channel_std"]
        except (OSError, KeyError, ValueError) as e:
            raise DataError(f"cannot read checkpoint {path}: {e}") from e

        arch_fields = meta["arch"]
        arch = ConvNetArchitecture(**{
            key: tuple(value) if isinstance(value, list) else value for key, value in arch_fields.items()
        })
        network = build_network(arch, meta["n_channels"], meta["n_samples"], meta["n_classes"], np.random.default_rng(0))
        network.load_state_dict(state)
        return cls(
            arch=arch,
            network=network,
            n_channels=meta["n_channels"],
            n_samples=meta["n_samples"],
            n_classes=meta["n_classes"],
            channel_mean=channel_mean,
            channel_std=channel_std,
        )


def forward(model: ConvNetModel, batch: np.ndarray, train_mode: bool = False) -> np.ndarray:
    """
    Class probabilities of a batch

    Args:
        model: ConvNet model
        batch: [B][channels][samples] raw class-trial samples
        train_mode: Use batch statistics and dropout

    Returns:
        [B][n_classes] probabilities, rows summing to 1
    """
    net = model.network.train() if train_mode else model.network.eval()
    return probabilities(net.forward(model.standardize(np.asarray(batch, dtype=np.float64))))


def backward(model: ConvNetModel, batch: np.ndarray, labels: Sequence[int]) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Train-mode forward pass and gradients of the mean cross-entropy

    Args:
        model: ConvNet model
        batch: [B][channels][samples] raw samples
        labels: Class labels (1-based)

    Returns:
        (loss, gradient per parameter name)
    """
    loss_fn = SoftmaxCrossEntropy()
    net = model.network.train()
    net.zero_grad()
    loss = loss_fn.forward(net.forward(model.standardize(np.asarray(batch, dtype=np.float64))), np.asarray(labels) - 1)
    net.backward(loss_fn.backward())
    return loss, {p.name: p.grad.copy() for p in net.parameters()}


# ============================================================================
# Training
# ============================================================================

@dataclass
class EpochRecord:
    epoch: int
    phase: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingLog:
    """Per-epoch losses and accuracies of both stopping phases"""
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    phase1_epochs: int = 0
    phase2_epochs: int = 0
    target_loss: float = float("nan")

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def write_csv(self, path: Union[str, Path]) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(TRAINING_LOG_COLUMNS)
                for r in self.records:
                    writer.writerow([r.epoch, r.phase, f"{r.train_loss:.6f}", f"{r.val_loss:.6f}", f"{r.val_acc:.6f}"])
        except OSError as e:
            raise DataError(f"failed to write training log {path}: {e}") from e


def _stack(trials: Sequence[ClassTrial]) -> Tuple[np.ndarray, np.ndarray]:
    return np.stack([t.samples for t in trials]), np.array([t.label - 1 for t in trials], dtype=int)


def _evaluate(net: Sequential, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Eval-mode mean loss and accuracy"""
    net.eval()
    loss_fn = SoftmaxCrossEntropy()
    total_loss = 0.0
    correct = 0
    for start in range(0, len(x), _EVAL_BATCH):
        logits = net.forward(x[start:start + _EVAL_BATCH])
        targets = y[start:start + _EVAL_BATCH]
        total_loss += loss_fn.forward(logits, targets) * len(targets)
        correct += int(np.sum(np.argmax(logits, axis=1) == targets))
    return total_loss / len(x), correct / len(x)


def _train_epoch(
    net: Sequential,
    optimizer: Adam,
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """One shuffled pass; returns the trial-weighted mean mini-batch loss"""
    net.train()
    loss_fn = SoftmaxCrossEntropy()
    order = rng.permutation(len(x))
    total = 0.0
    for start in range(0, len(x), batch_size):
        index = order[start:start + batch_size]
        optimizer.zero_grad()
        loss = loss_fn.forward(net.forward(x[index]), y[index])
        net.backward(loss_fn.backward())
        optimizer.step()
        total += loss * len(index)
    return total / len(x)


def train(
    train_trials: Sequence[ClassTrial],
    val_trials: Sequence[ClassTrial],
    arch: ConvNetArchitecture = DEFAULT_ARCHITECTURE,
    cfg: TrainConfig = DEFAULT_TRAIN_CONFIG,
    n_classes: Optional[int] = None,
) -> Tuple[ConvNetModel, TrainingLog]:
    """
    Train the ConvNet with two-phase early stopping

    Args:
        train_trials: Cleaned training class-trials
        val_trials: Cleaned validation class-trials
        arch: Network layout
        cfg: Optimizer and stopping configuration
        n_classes: Output classes (largest training label if None)

    Returns:
        (trained model, training log)

    Raises:
        DataError: If a split is empty or trial shapes differ
    """
    if not train_trials or not val_trials:
        raise DataError("ConvNet training needs non-empty training and validation trials")
    cfg.validate()

    x_train, y_train = _stack(train_trials)
    x_val, y_val = _stack(val_trials)
    if x_train.shape[1:] != x_val.shape[1:]:
        raise DataError(f"training trials {x_train.shape[1:]} and validation trials {x_val.shape[1:]} differ in shape")
    n_classes = n_classes or int(max(y_train.max(), y_val.max()) + 1)
    if n_classes < 2:
        raise ConfigError("ConvNet needs at least 2 classes")
    _, n_channels, n_samples = x_train.shape

    channel_mean = x_train.mean(axis=(0, 2))
    channel_std = x_train.std(axis=(0, 2))
    channel_std = np.where(channel_std > 1e-12, channel_std, 1.0)

    rng = np.random.default_rng(cfg.seed)
    model = ConvNetModel(
        arch=arch,
        network=build_network(arch, n_channels, n_samples, n_classes, rng),
        n_channels=n_channels,
        n_samples=n_samples,
        n_classes=n_classes,
        channel_mean=channel_mean,
        channel_std=channel_std,
    )
    net = model.network
    x_train = model.standardize(x_train)
    x_val = model.standardize(x_val)
    optimizer = Adam(net.parameters(), cfg.learning_rate, cfg.betas, cfg.epsilon)
    log = TrainingLog()

    # Phase 1: training split only, best validation accuracy wins
    best_acc = -1.0
    best_state = net.state_dict()
    best_train_loss = float("inf")
    stale = 0
    epoch = 0
    while epoch < cfg.max_epochs:
        epoch += 1
        train_loss = _train_epoch(net, optimizer, x_train, y_train, cfg.batch_size, rng)
        val_loss, val_acc = _evaluate(net, x_val, y_val)
        log.append(EpochRecord(epoch, 1, train_loss, val_loss, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = net.state_dict()
            best_train_loss = train_loss
            log.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    log.phase1_epochs = epoch
    net.load_state_dict(best_state)
    log.target_loss = best_train_loss
    logger.info(
        f"[ConvNet] phase 1 stopped after {epoch} epochs "
        f"(best validation accuracy {best_acc:.3f} at epoch {log.best_epoch})"
    )

    # Phase 2: train + validation until validation loss reaches the phase-1 training loss
    x_all = np.concatenate([x_train, x_val])
    y_all = np.concatenate([y_train, y_val])
    remaining = cfg.max_epochs - epoch
    for _ in range(remaining):
        epoch += 1
        train_loss = _train_epoch(net, optimizer, x_all, y_all, cfg.batch_size, rng)
        val_loss, val_acc = _evaluate(net, x_val, y_val)
        log.append(EpochRecord(epoch, 2, train_loss, val_loss, val_acc))
        log.phase2_epochs += 1
        if val_loss <= best_train_loss:
            break
    logger.info(f"[ConvNet] phase 2 ran {log.phase2_epochs} epochs (target loss {best_train_loss:.4f})")

    net.eval()
    return model, log


def predict_convnet(model: ConvNetModel, trials: Sequence[ClassTrial]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Labels (ties to the lowest class id) and class probabilities

    Args:
        model: Trained model
        trials: Class-trials to classify

    Returns:
        (1-based labels, [n_trials][n_classes] probabilities)
    """
    if not trials:
        return np.zeros(0, dtype=int), np.zeros((0, model.n_classes))
    batch = np.stack([t.samples for t in trials])
    chunks = [forward(model, batch[i:i + _EVAL_BATCH]) for i in range(0, len(batch), _EVAL_BATCH)]
    probs = np.concatenate(chunks)
    return np.argmax(probs, axis=1) + 1, probs


def check_gradients(model: ConvNetModel, batch: np.ndarray, labels: Sequence[int], step: float = 1e-5) -> Dict[str, float]:
    """Finite-difference check of every parameter gradient (dropout off)"""
    x = model.standardize(np.asarray(batch, dtype=np.float64))
    return gradient_check(model.network, x, np.asarray(labels) - 1, step)
