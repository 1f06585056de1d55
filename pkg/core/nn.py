"""
Feed-Forward Network Engine - Affine/ReLU/BatchNorm layers, manual backprop, SGD with momentum
"""
import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import DegenerateInputError, ShapeError, StateError

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


class LayerKind(Enum):
    AFFINE = "affine"
    RELU = "relu"
    BATCHNORM = "batchnorm"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_dim: int
    out_dim: int
    # batchnorm only: learnable gamma/beta, or a fixed unit-variance output
    affine: bool = True


def mlp_spec(sizes: Sequence[int], relu_hidden: bool = True,
             batchnorm_output: bool = False) -> List[LayerSpec]:
    """
    Layer stack for sizes like (392, 500, 300, 50): affine between consecutive
    sizes, ReLU after every hidden affine, optional batchnorm on the output.
    The output batchnorm has no scale or shift so the embedding keeps unit
    variance per column.
    """
    if len(sizes) < 2:
        raise ShapeError(f"an MLP needs at least input and output sizes, got {list(sizes)}")
    specs: List[LayerSpec] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        specs.append(LayerSpec(LayerKind.AFFINE, fan_in, fan_out))
        is_last = i == len(sizes) - 2
        if relu_hidden and not is_last:
            specs.append(LayerSpec(LayerKind.RELU, fan_out, fan_out))
    if batchnorm_output:
        specs.append(LayerSpec(LayerKind.BATCHNORM, sizes[-1], sizes[-1], affine=False))
    return specs


# ── Layers ─────────────────────────────────────────────────────────────

class Affine:
    kind = LayerKind.AFFINE

    def __init__(self, in_dim: int, out_dim: int):
        self.weight = np.zeros((in_dim, out_dim))
        self.bias = np.zeros(out_dim)

    def params(self) -> Dict[str, np.ndarray]:
        return {'weight': self.weight, 'bias': self.bias}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, mode: Mode, update_running: bool = True):
        return x @ self.weight + self.bias, x

    def backward(self, cache: np.ndarray, grad_out: np.ndarray):
        grads = {'weight': cache.T @ grad_out, 'bias': grad_out.sum(axis=0)}
        return grads, grad_out @ self.weight.T


class ReLU:
    kind = LayerKind.RELU

    def params(self) -> Dict[str, np.ndarray]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, mode: Mode, update_running: bool = True):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache: np.ndarray, grad_out: np.ndarray):
        return {}, grad_out * cache


@dataclass
class BatchStats:
    """Per-batch statistics kept in the trace for the backward pass."""
    mean: np.ndarray
    var: np.ndarray
    inv_std: np.ndarray
    xhat: np.ndarray


class BatchNorm:
    kind = LayerKind.BATCHNORM

    def __init__(self, dim: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM,
                 affine: bool = True):
        self.affine = affine
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def params(self) -> Dict[str, np.ndarray]:
        if not self.affine:
            return {}
        return {'gamma': self.gamma, 'beta': self.beta}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {'running_mean': self.running_mean, 'running_var': self.running_var}

    def forward(self, x: np.ndarray, mode: Mode, update_running: bool = True):
        if mode == Mode.EVAL:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
            return self.gamma * xhat + self.beta, None

        m = x.shape[0]
        if m < 2:
            raise DegenerateInputError(f"batch normalization needs at least 2 rows in train mode, got {m}")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        if update_running:
            # in place so parameter/buffer views held elsewhere stay valid
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mean
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var * m / (m - 1)
        return self.gamma * xhat + self.beta, BatchStats(mean, var, inv_std, xhat)

    def backward(self, cache: BatchStats, grad_out: np.ndarray):
        m = grad_out.shape[0]
        grads = {}
        if self.affine:
            grads = {
                'gamma': np.sum(grad_out * cache.xhat, axis=0),
                'beta': grad_out.sum(axis=0),
            }
        dxhat = grad_out * self.gamma
        grad_in = (cache.inv_std / m) * (
            m * dxhat - dxhat.sum(axis=0) - cache.xhat * np.sum(dxhat * cache.xhat, axis=0)
        )
        return grads, grad_in


Layer = Union[Affine, ReLU, BatchNorm]


def _build_layer(spec: LayerSpec) -> Layer:
    if spec.kind == LayerKind.AFFINE:
        return Affine(spec.in_dim, spec.out_dim)
    if spec.kind == LayerKind.RELU:
        return ReLU()
    return BatchNorm(spec.out_dim, affine=spec.affine)


@dataclass
class ForwardTrace:
    mode: Mode
    activations: List[np.ndarray]
    caches: List[object] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


# ── Model ──────────────────────────────────────────────────────────────

class MlpModel:
    """An ordered stack of layers with named parameters and buffers."""

    def __init__(self, specs: Sequence[LayerSpec]):
        specs = list(specs)
        if not specs:
            raise ShapeError("model needs at least one layer")
        for prev, cur in zip(specs[:-1], specs[1:]):
            if prev.out_dim != cur.in_dim:
                raise ShapeError(f"layer dims incompatible: {prev} -> {cur}")
        for spec in specs:
            if spec.kind != LayerKind.AFFINE and spec.in_dim != spec.out_dim:
                raise ShapeError(f"{spec.kind.value} layer must keep its width: {spec}")
        self.specs = specs
        self.layers: List[Layer] = [_build_layer(s) for s in specs]

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{name}": arr
                for i, layer in enumerate(self.layers)
                for name, arr in layer.params().items()}

    def named_buffers(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{name}": arr
                for i, layer in enumerate(self.layers)
                for name, arr in layer.buffers().items()}

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {**self.named_parameters(), **self.named_buffers()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        for name, target in self.state_arrays().items():
            if name not in arrays:
                raise ShapeError(f"missing array {name!r}")
            source = np.asarray(arrays[name], dtype=np.float64)
            if source.shape != target.shape:
                raise ShapeError(f"array {name!r} has shape {source.shape}, expected {target.shape}")
            target[...] = source

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def forward(self, x: np.ndarray, mode: Mode = Mode.TRAIN,
                update_running: bool = True) -> ForwardTrace:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"input shape {x.shape} does not match model input width {self.in_dim}")
        trace = ForwardTrace(mode=mode, activations=[x])
        for layer in self.layers:
            x, cache = layer.forward(x, mode, update_running)
            trace.activations.append(x)
            trace.caches.append(cache)
        return trace

    def backward(self, trace: ForwardTrace,
                 grad_out: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        if trace.mode != Mode.TRAIN:
            raise StateError("backward needs a trace recorded in train mode")
        if grad_out.shape != trace.output.shape:
            raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {trace.output.shape}")
        grads: Dict[str, np.ndarray] = {}
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer_grads, g = self.layers[i].backward(trace.caches[i], g)
            for name, arr in layer_grads.items():
                grads[f"{i}.{name}"] = arr
        return grads, g

    def embed(self, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
        """Eval-mode forward over a whole dataset in chunks."""
        chunks = [self.forward(x[i:i + batch_size], Mode.EVAL).output
                  for i in range(0, x.shape[0], batch_size)]
        return np.vstack(chunks) if chunks else np.zeros((0, self.out_dim))


def init_model(specs: Sequence[LayerSpec], seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases, unit batchnorm scale; deterministic in ``seed``."""
    model = MlpModel(specs)
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if isinstance(layer, Affine):
            fan_in, fan_out = layer.weight.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layer.weight[...] = rng.uniform(-limit, limit, size=layer.weight.shape)
    return model


# ── Optimizer ──────────────────────────────────────────────────────────

@dataclass
class Optimizer:
    lr: float
    momentum: float = 0.9
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be nonnegative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    def step(self, model: MlpModel, grads: Dict[str, np.ndarray]):
        """v <- mu*v - lr*g ; p <- p + v, in place for every parameter."""
        for name, param in model.named_parameters().items():
            grad = grads.get(name)
            if grad is None or grad.shape != param.shape:
                got = None if grad is None else grad.shape
                raise ShapeError(f"gradient for {name!r} has shape {got}, expected {param.shape}")
            velocity = self.velocities.get(name)
            if velocity is None:
                velocity = np.zeros_like(param)
            velocity = self.momentum * velocity - self.lr * grad
            self.velocities[name] = velocity
            param += velocity

    def state_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {f"{prefix}{name}": v for name, v in self.velocities.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = ""):
        self.velocities = {name[len(prefix):]: np.array(v, dtype=np.float64)
                           for name, v in arrays.items() if name.startswith(prefix)}


def sgd_step(optimizer: Optimizer, model: MlpModel, grads: Dict[str, np.ndarray]) -> MlpModel:
    optimizer.step(model, grads)
    return model


def has_batchnorm(model: MlpModel) -> bool:
    return any(isinstance(layer, BatchNorm) for layer in model.layers)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient w.r.t. the logits."""
    m = logits.shape[0]
    log_z = logsumexp(logits, axis=1)
    loss = float(np.mean(log_z - logits[np.arange(m), labels]))
    grad = softmax(logits, axis=1)
    grad[np.arange(m), labels] -= 1.0
    return loss, grad / m
