"""Two-layer perceptron (input -> hidden ReLU -> softmax) with manual gradients.

Parameters live in one flat float64 vector laid out as::

    W1 (input_dim x hidden_dim, row-major) | b1 (hidden_dim)
    W2 (hidden_dim x num_classes, row-major) | b2 (num_classes)

so federated averaging is plain vector arithmetic. The hidden layer
(W1, b1) is the "base" and the output layer (W2, b2) is the "head".

Checkpoint byte layout (all little-endian)::

    4 bytes   ASCII "MLP1"
    3 x u32   input_dim, hidden_dim, num_classes
    n x f64   flat parameter vector
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArchMismatch, EmptyData, FormatError, InvalidSpec, ShapeMismatch

CHECKPOINT_MAGIC = b"MLP1"


@dataclass(frozen=True)
class MlpArch:
    input_dim: int
    hidden_dim: int = 100
    num_classes: int = 10

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.num_classes) < 1:
            raise InvalidSpec("all MLP dimensions must be >= 1")

    @property
    def size(self) -> int:
        D, H, C = self.input_dim, self.hidden_dim, self.num_classes
        return D * H + H + H * C + C

    @property
    def base_size(self) -> int:
        """Number of leading entries belonging to the hidden layer."""
        return self.input_dim * self.hidden_dim + self.hidden_dim


@dataclass(frozen=True)
class ModelParams:
    flat: np.ndarray
    arch: MlpArch

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64)
        if flat.shape != (self.arch.size,):
            raise ArchMismatch(f"expected {self.arch.size} parameters, got {flat.shape}")
        flat.flags.writeable = False
        object.__setattr__(self, "flat", flat)

    def unpack(self):
        D, H, C = self.arch.input_dim, self.arch.hidden_dim, self.arch.num_classes
        f = self.flat
        o1 = D * H
        o2 = o1 + H
        o3 = o2 + H * C
        return f[:o1].reshape(D, H), f[o1:o2], f[o2:o3].reshape(H, C), f[o3:]

    def replace(self, flat) -> "ModelParams":
        return ModelParams(flat, self.arch)

    def save(self, path) -> None:
        a = self.arch
        header = CHECKPOINT_MAGIC + struct.pack("<3I", a.input_dim, a.hidden_dim, a.num_classes)
        Path(path).write_bytes(header + self.flat.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ModelParams":
        data = Path(path).read_bytes()
        if data[:4] != CHECKPOINT_MAGIC or len(data) < 16:
            raise FormatError(f"{path}: not a parameter checkpoint")
        arch = MlpArch(*struct.unpack("<3I", data[4:16]))
        if len(data) != 16 + 8 * arch.size:
            raise FormatError(f"{path}: payload size does not match header")
        return cls(np.frombuffer(data[16:], dtype="<f8"), arch)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 10
    local_epochs: int = 1
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.local_epochs < 1:
            raise InvalidSpec("batch_size and local_epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise InvalidSpec("learning_rate must be nonnegative")


def init_params(arch: MlpArch, seed: int | np.random.Generator = 0) -> ModelParams:
    """Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    D, H, C = arch.input_dim, arch.hidden_dim, arch.num_classes
    b1 = np.sqrt(6.0 / (D + H))
    b2 = np.sqrt(6.0 / (H + C))
    W1 = rng.uniform(-b1, b1, size=(D, H))
    W2 = rng.uniform(-b2, b2, size=(H, C))
    return ModelParams(np.concatenate([W1.ravel(), np.zeros(H), W2.ravel(), np.zeros(C)]), arch)


def _check_batch(params: ModelParams, X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.arch.input_dim:
        raise ShapeMismatch(f"features of shape {X.shape} do not match input_dim={params.arch.input_dim}")
    if y is not None:
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ShapeMismatch("labels must be a vector with one entry per row")
        if y.size and (y.min() < 0 or y.max() >= params.arch.num_classes):
            raise ShapeMismatch("label outside [0, num_classes)")
    return X, y


def _forward(params: ModelParams, X):
    W1, b1, W2, b2 = params.unpack()
    pre = X @ W1 + b1
    h = np.maximum(pre, 0.0)
    z = h @ W2 + b2
    return pre, h, z


def _log_softmax(z):
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(params: ModelParams, X, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and softmax probabilities of a batch."""
    X, y = _check_batch(params, X, y)
    if len(y) == 0:
        raise EmptyData("empty batch")
    _, _, z = _forward(params, X)
    logp = _log_softmax(z)
    loss = -logp[np.arange(len(y)), y].mean()
    return float(loss), np.exp(logp)


def loss(params: ModelParams, X, y) -> float:
    return forward_loss(params, X, y)[0]


def backward(params: ModelParams, X, y) -> np.ndarray:
    """Gradient of the mean cross-entropy, as a flat vector."""
    X, y = _check_batch(params, X, y)
    n = len(y)
    if n == 0:
        raise EmptyData("empty batch")
    _, _, W2, _ = params.unpack()
    pre, h, z = _forward(params, X)
    dz = np.exp(_log_softmax(z))
    dz[np.arange(n), y] -= 1.0
    dz /= n
    gW2 = h.T @ dz
    gb2 = dz.sum(axis=0)
    dh = dz @ W2.T
    dh[pre <= 0] = 0.0
    gW1 = X.T @ dh
    gb1 = dh.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def sgd_epochs(params: ModelParams, X, y, config: TrainingConfig,
               rng: np.random.Generator | None = None, epochs: int | None = None) -> ModelParams:
    """``config.local_epochs`` passes of minibatch SGD over (X, y).

    Batch order is drawn from ``rng`` (default: a generator seeded with
    ``config.seed``).
    """
    X, y = _check_batch(params, X, y)
    if len(y) == 0:
        raise EmptyData("no training samples")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    w = params.flat.copy()
    for _ in range(config.local_epochs if epochs is None else epochs):
        for b in batches(len(y), config.batch_size, rng):
            w -= lr * backward(ModelParams(w, params.arch), X[b], y[b])
    return params.replace(w)


def average_params(weighted: Sequence[tuple[ModelParams, float]]) -> ModelParams:
    """Weighted elementwise mean, summed in list order."""
    if not weighted:
        raise InvalidSpec("nothing to average")
    arch = weighted[0][0].arch
    if any(p.arch != arch for p, _ in weighted):
        raise ArchMismatch("cannot average parameters of different architectures")
    w = np.array([float(wt) for _, wt in weighted])
    if (w < 0).any() or not w.sum() > 0:
        raise InvalidSpec("weights must be nonnegative and not all zero")
    w = w / w.sum()
    out = w[0] * weighted[0][0].flat
    for (p, _), wi in zip(weighted[1:], w[1:]):
        out = out + wi * p.flat
    return ModelParams(out, arch)


def predict(params: ModelParams, X) -> np.ndarray:
    X, _ = _check_batch(params, X)
    _, _, z = _forward(params, X)
    return np.argmax(z, axis=1)  # first maximum wins ties


def accuracy(params: ModelParams, X, y) -> float:
    """Percent of rows whose argmax prediction equals the label."""
    X, y = _check_batch(params, X, y)
    if len(y) == 0:
        raise EmptyData("cannot score an empty set")
    return 100.0 * float(np.count_nonzero(predict(params, X) == y)) / len(y)


def finite_difference(params: ModelParams, X, y, coords, step: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of d loss / d flat[j] for each j in ``coords``."""
    out = np.empty(len(coords))
    for i, j in enumerate(coords):
        e = np.zeros(params.arch.size)
        e[j] = step
        out[i] = (loss(params.replace(params.flat + e), X, y) - loss(params.replace(params.flat - e), X, y)) / (2 * step)
    return out


def relative_error(a, b, floor: float = 1e-10) -> np.ndarray:
    """|a - b| / max(|a|, |b|); pairs where both sides are below ``floor`` count as exact."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.where(scale < floor, 0.0, np.abs(a - b) / np.maximum(scale, floor))
