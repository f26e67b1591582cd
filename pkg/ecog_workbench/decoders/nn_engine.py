"""
Neural Network Engine

Minimal layer-wise forward/backward engine for the ConvNet decoder, in
float64 numpy:
- Tensor: parameter values with an accumulated gradient
- Module: forward() caches what backward() needs; backward() returns the
  input gradient and accumulates parameter gradients
- layers: temporal, spatial and 1-D convolution, batch norm, ELU, max-pool,
  dropout, flatten, dense
- softmax cross-entropy loss and the Adam optimizer

Convolutions have no bias (every one is followed by batch norm). Max-pool
routes the gradient to the first maximal element of each window.
"""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from ..errors import DataError


class Tensor:
    """Named parameter array with a same-shape gradient"""

    def __init__(self, values: np.ndarray, name: str = "", trainable: bool = True):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape})"


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out))"""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Base class of all layers"""

    def __init__(self):
        self.training = True
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> List[Tensor]:
        return []

    def buffers(self) -> List[Tensor]:
        return []

    def train(self) -> "Module":
        self.training = True
        return self

    def eval(self) -> "Module":
        self.training = False
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def __repr__(self) -> str:
        return type(self).__name__


class Sequential(Module):
    """Container applying its modules in order"""

    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        self.modules: List[Module] = list(modules)

    def add(self, module: Module) -> "Sequential":
        self.modules.append(module)
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        for module in self.modules:
            x = module.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for module in reversed(self.modules):
            grad_out = module.backward(grad_out)
        return grad_out

    def parameters(self) -> List[Tensor]:
        return [p for module in self.modules for p in module.parameters()]

    def buffers(self) -> List[Tensor]:
        return [b for module in self.modules for b in module.buffers()]

    def train(self) -> "Sequential":
        self.training = True
        for module in self.modules:
            module.train()
        return self

    def eval(self) -> "Sequential":
        self.training = False
        for module in self.modules:
            module.eval()
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of all parameter and buffer values by name"""
        return {t.name: t.values.copy() for t in self.parameters() + self.buffers()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for t in self.parameters() + self.buffers():
            if t.name not in state:
                raise DataError(f"state has no entry for {t.name}")
            values = np.asarray(state[t.name], dtype=np.float64)
            if values.shape != t.shape:
                raise DataError(f"{t.name}: shape {values.shape} does not match {t.shape}")
            t.values[...] = values

    def __repr__(self) -> str:
        return "Sequential(\n  " + "\n  ".join(repr(m) for m in self.modules) + "\n)"


def _overlap_add(window_grads: np.ndarray, length: int) -> np.ndarray:
    """Scatter [..., L_out, K] window gradients back onto a length-L axis"""
    kernel = window_grads.shape[-1]
    n_out = window_grads.shape[-2]
    grad = np.zeros(window_grads.shape[:-2] + (length,))
    for k in range(kernel):
        grad[..., k:k + n_out] += window_grads[..., k]
    return grad


# ============================================================================
# Convolutions
# ============================================================================

class TemporalConv(Module):
    """
    Per-channel temporal convolution shared across channels

    [B][C][L] -> [B][F][C][L - K + 1]
    """

    def __init__(self, n_filters: int, kernel_length: int, rng: np.random.Generator, name: str = "temporal"):
        super().__init__()
        self.kernel_length = kernel_length
        self.weight = Tensor(
            glorot_uniform(rng, (n_filters, kernel_length), kernel_length, n_filters * kernel_length),
            f"{name}.weight",
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3:
            raise DataError(f"temporal convolution expects [B][C][L] input (got shape {x.shape})")
        if x.shape[2] < self.kernel_length:
            raise DataError(f"input of length {x.shape[2]} is shorter than the kernel ({self.kernel_length})")
        windows = sliding_window_view(x, self.kernel_length, axis=2)
        self._cache = (windows, x.shape[2])
        return np.einsum("bctk,fk->bfct", windows, self.weight.values, optimize=True)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        windows, length = self._cache
        self.weight.grad += np.einsum("bfct,bctk->fk", grad_out, windows, optimize=True)
        window_grads = np.einsum("bfct,fk->bctk", grad_out, self.weight.values, optimize=True)
        return _overlap_add(window_grads, length)

    def parameters(self) -> List[Tensor]:
        return [self.weight]

    def __repr__(self) -> str:
        return f"TemporalConv(filters={self.weight.shape[0]}, kernel={self.kernel_length})"


class SpatialConv(Module):
    """
    Combination across all recording channels

    [B][F][C][L] -> [B][G][L]
    """

    def __init__(self, in_filters: int, n_channels: int, out_filters: int, rng: np.random.Generator, name: str = "spatial"):
        super().__init__()
        self.weight = Tensor(
            glorot_uniform(rng, (out_filters, in_filters, n_channels), in_filters * n_channels, out_filters),
            f"{name}.weight",
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1:3] != self.weight.shape[1:3]:
            raise DataError(f"spatial convolution expects [B][{self.weight.shape[1]}][{self.weight.shape[2]}][L] (got {x.shape})")
        self._cache = x
        return np.einsum("bfcl,gfc->bgl", x, self.weight.values, optimize=True)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._cache
        self.weight.grad += np.einsum("bgl,bfcl->gfc", grad_out, x, optimize=True)
        return np.einsum("bgl,gfc->bfcl", grad_out, self.weight.values, optimize=True)

    def parameters(self) -> List[Tensor]:
        return [self.weight]

    def __repr__(self) -> str:
        g, f, c = self.weight.shape
        return f"SpatialConv({f}x{c} -> {g})"


class Conv1d(Module):
    """[B][F][L] -> [B][G][L - K + 1]"""

    def __init__(self, in_filters: int, out_filters: int, kernel_length: int, rng: np.random.Generator, name: str = "conv"):
        super().__init__()
        self.kernel_length = kernel_length
        self.weight = Tensor(
            glorot_uniform(
                rng, (out_filters, in_filters, kernel_length), in_filters * kernel_length, out_filters * kernel_length
            ),
            f"{name}.weight",
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.weight.shape[1]:
            raise DataError(f"convolution expects [B][{self.weight.shape[1]}][L] input (got {x.shape})")
        if x.shape[2] < self.kernel_length:
            raise DataError(f"input of length {x.shape[2]} is shorter than the kernel ({self.kernel_length})")
        windows = sliding_window_view(x, self.kernel_length, axis=2)
        self._cache = (windows, x.shape[2])
        return np.einsum("bflk,gfk->bgl", windows, self.weight.values, optimize=True)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        windows, length = self._cache
        self.weight.grad += np.einsum("bgl,bflk->gfk", grad_out, windows, optimize=True)
        window_grads = np.einsum("bgl,gfk->bflk", grad_out, self.weight.values, optimize=True)
        return _overlap_add(window_grads, length)

    def parameters(self) -> List[Tensor]:
        return [self.weight]

    def __repr__(self) -> str:
        g, f, k = self.weight.shape
        return f"Conv1d({f} -> {g}, kernel={k})"


# ============================================================================
# Normalization, Nonlinearity, Pooling
# ============================================================================

class BatchNorm(Module):
    """
    Batch normalization per feature map of [B][F][L]

    Train mode normalizes with the batch statistics over (B, L) and updates
    the running estimates; eval mode uses the running estimates.
    """

    def __init__(self, n_features: int, eps: float = 1e-5, momentum: float = 0.1, name: str = "bn"):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(n_features), f"{name}.gamma")
        self.beta = Tensor(np.zeros(n_features), f"{name}.beta")
        self.running_mean = Tensor(np.zeros(n_features), f"{name}.running_mean", trainable=False)
        self.running_var = Tensor(np.ones(n_features), f"{name}.running_var", trainable=False)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Standardized input before the affine step"""
        if self.training:
            mean = x.mean(axis=(0, 2), keepdims=True)
            var = x.var(axis=(0, 2), keepdims=True)
        else:
            mean = self.running_mean.values[None, :, None]
            var = self.running_var.values[None, :, None]
        return (x - mean) / np.sqrt(var + self.eps)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.gamma.shape[0]:
            raise DataError(f"batch norm expects [B][{self.gamma.shape[0]}][L] input (got {x.shape})")
        x_hat = self.normalize(x)
        if self.training:
            n = x.shape[0] * x.shape[2]
            batch_var = x.var(axis=(0, 2))
            unbiased = batch_var * n / (n - 1) if n > 1 else batch_var
            m = self.momentum
            self.running_mean.values[...] = (1 - m) * self.running_mean.values + m * x.mean(axis=(0, 2))
            self.running_var.values[...] = (1 - m) * self.running_var.values + m * unbiased
            self._cache = (x_hat, 1.0 / np.sqrt(batch_var + self.eps))
        else:
            self._cache = (x_hat, 1.0 / np.sqrt(self.running_var.values + self.eps))
        return self.gamma.values[None, :, None] * x_hat + self.beta.values[None, :, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_hat, inv_std = self._cache
        self.gamma.grad += np.sum(grad_out * x_hat, axis=(0, 2))
        self.beta.grad += np.sum(grad_out, axis=(0, 2))
        grad_hat = grad_out * self.gamma.values[None, :, None]
        inv_std = inv_std[None, :, None]
        if not self.training:
            return grad_hat * inv_std
        n = grad_out.shape[0] * grad_out.shape[2]
        sum_grad = grad_hat.sum(axis=(0, 2), keepdims=True)
        sum_grad_hat = (grad_hat * x_hat).sum(axis=(0, 2), keepdims=True)
        return inv_std / n * (n * grad_hat - sum_grad - x_hat * sum_grad_hat)

    def parameters(self) -> List[Tensor]:
        return [self.gamma, self.beta]

    def buffers(self) -> List[Tensor]:
        return [self.running_mean, self.running_var]

    def __repr__(self) -> str:
        return f"BatchNorm({self.gamma.shape[0]}, eps={self.eps}, momentum={self.momentum})"


def elu(x: np.ndarray) -> np.ndarray:
    """x for x > 0, exp(x) - 1 otherwise"""
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


class ELU(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return elu(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._cache
        return grad_out * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


class MaxPool(Module):
    """Max-pool along the last axis; L_out = (L - P) // S + 1, no padding"""

    def __init__(self, length: int, stride: int):
        super().__init__()
        self.length = length
        self.stride = stride

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] < self.length:
            raise DataError(f"input of length {x.shape[-1]} is shorter than the pool ({self.length})")
        windows = sliding_window_view(x, self.length, axis=-1)[..., ::self.stride, :]
        arg = np.argmax(windows, axis=-1)
        self._cache = (arg, x.shape)
        return np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        arg, shape = self._cache
        grad = np.zeros(shape)
        n_out = arg.shape[-1]
        span = self.stride * (n_out - 1) + 1
        for p in range(self.length):
            grad[..., p:p + span:self.stride] += np.where(arg == p, grad_out, 0.0)
        return grad

    def __repr__(self) -> str:
        return f"MaxPool(length={self.length}, stride={self.stride})"


class Dropout(Module):
    """Inverted dropout; identity in eval mode or at rate 0"""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x: np.ndarray) -> np.ndarray:
        if not self.training or self.rate == 0.0:
            self._cache = None
            return x
        mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out if self._cache is None else grad_out * self._cache

    def __repr__(self) -> str:
        return f"Dropout({self.rate})"


class Flatten(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._cache)


class Dense(Module):
    """[B][D] -> [B][n_out]"""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        super().__init__()
        self.weight = Tensor(glorot_uniform(rng, (n_out, n_in), n_in, n_out), f"{name}.weight")
        self.bias = Tensor(np.zeros(n_out), f"{name}.bias")

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise DataError(f"dense layer expects [B][{self.weight.shape[1]}] input (got {x.shape})")
        self._cache = x
        return x @ self.weight.values.T + self.bias.values

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._cache
        self.weight.grad += grad_out.T @ x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.values

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def __repr__(self) -> str:
        return f"Dense({self.weight.shape[1]} -> {self.weight.shape[0]})"


# ============================================================================
# Loss & Optimizer
# ============================================================================

class SoftmaxCrossEntropy:
    """Mean categorical cross-entropy over a batch of logits"""

    def __init__(self):
        self._cache = None

    def forward(self, logits: np.ndarray, targets: np.ndarray) -> float:
        """
        Args:
            logits: [B][n_classes]
            targets: Class index (0-based) per row

        Returns:
            Mean loss
        """
        targets = np.asarray(targets, dtype=int)
        log_p = log_softmax(logits, axis=1)
        self._cache = (np.exp(log_p), targets)
        return float(-np.mean(log_p[np.arange(len(targets)), targets]))

    def backward(self) -> np.ndarray:
        """Gradient (p - onehot) / B with respect to the logits"""
        probabilities, targets = self._cache
        grad = probabilities.copy()
        grad[np.arange(len(targets)), targets] -= 1.0
        return grad / len(targets)


def probabilities(logits: np.ndarray) -> np.ndarray:
    return softmax(logits, axis=1)


class Adam:
    """Adam with bias-corrected first and second moment estimates"""

    def __init__(
        self,
        params: Iterable[Tensor],
        learning_rate: float = 0.001,
        betas: Tuple[float, float] = (0.9, 0.999),
        epsilon: float = 1e-8,
    ):
        self.params = [p for p in params if p.trainable]
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad ** 2
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p.values -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ============================================================================
# Gradient Check
# ============================================================================

def gradient_check(
    net: Sequential,
    x: np.ndarray,
    targets: np.ndarray,
    step: float = 1e-5,
    params: Optional[Sequence[Tensor]] = None,
) -> Dict[str, float]:
    """
    Compare analytic parameter gradients with central finite differences

    Runs in train mode with every dropout layer switched off.

    Args:
        net: Network ending in logits
        x: Input batch
        targets: 0-based class index per row
        step: Finite-difference step
        params: Parameters to check (all trainable ones if None)

    Returns:
        Relative error ||a - f|| / (||a|| + ||f|| + 1e-8) per parameter name
    """
    dropouts = [m for m in net.modules if isinstance(m, Dropout)]
    saved_rates = [d.rate for d in dropouts]
    for d in dropouts:
        d.rate = 0.0
    net.train()
    loss = SoftmaxCrossEntropy()

    def evaluate() -> float:
        return loss.forward(net.forward(x), targets)

    # Running statistics change on every train-mode pass; keep them fixed
    buffers = {b.name: b.values.copy() for b in net.buffers()}

    try:
        net.zero_grad()
        evaluate()
        net.backward(loss.backward())
        errors: Dict[str, float] = {}
        for p in params if params is not None else net.parameters():
            analytic = p.grad.copy()
            numeric = np.zeros_like(p.values)
            flat = p.values.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + step
                plus = evaluate()
                flat[i] = original - step
                minus = evaluate()
                flat[i] = original
                numeric.reshape(-1)[i] = (plus - minus) / (2.0 * step)
            diff = np.linalg.norm(analytic - numeric)
            errors[p.name] = float(diff / (np.linalg.norm(analytic) + np.linalg.norm(numeric) + 1e-8))
    finally:
        for d, rate in zip(dropouts, saved_rates):
            d.rate = rate
        for b in net.buffers():
            b.values[...] = buffers[b.name]
    return errors
