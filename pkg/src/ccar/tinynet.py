"""Small ReLU MLP with hand-written backprop and momentum SGD."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .losses import ClassStats, LossConfig, batch_loss_and_grad

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch, self.batch = epoch, batch
        msg = f"non-finite loss at epoch {epoch}, batch {batch}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


@dataclass
class MLPParams:
    """``layers[i] = (W, b)`` with ``W`` shaped ``(out, in)``."""

    layers: List[Tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i} expects {W.shape[1]} inputs, previous layer gives {self.layers[i - 1][0].shape[0]}")

    @property
    def dims(self) -> List[int]:
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    def arrays(self) -> List[np.ndarray]:
        return [a for pair in self.layers for a in pair]

    def copy(self) -> "MLPParams":
        return MLPParams([(W.copy(), b.copy()) for W, b in self.layers])

    def tobytes(self) -> bytes:
        return b"".join(a.tobytes() for a in self.arrays())


@dataclass(frozen=True)
class SGDConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


class ForwardCache(NamedTuple):
    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activations of each layer


def init_params(dims: Sequence[int], seed: int) -> MLPParams:
    """Uniform ``±sqrt(6 / fan_in)`` weights, zero biases."""
    if len(dims) < 2:
        raise ValueError(f"need at least input and output dims, got {list(dims)}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return MLPParams(layers)


def forward(params: MLPParams, X) -> Tuple[np.ndarray, ForwardCache]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.dims[0]:
        raise ValueError(f"inputs of shape {X.shape} do not fit a net with input dim {params.dims[0]}")
    inputs, pre = [], []
    h = X
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        inputs.append(h)
        a = h @ W.T + b
        pre.append(a)
        h = a if i == last else np.maximum(a, 0.0)
    return h, ForwardCache(inputs, pre)


def backward(params: MLPParams, cache: ForwardCache, grad_logits) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients given dL/dlogits for every row of the batch."""
    delta = np.asarray(grad_logits, dtype=np.float64)
    if delta.shape != cache.pre[-1].shape:
        raise ValueError(f"grad_logits shape {delta.shape} != logits shape {cache.pre[-1].shape}")
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[i]
        grads[i] = (delta.T @ cache.inputs[i], delta.sum(axis=0))
        if i:
            delta = (delta @ W) * (cache.pre[i - 1] > 0.0)
    return grads


def sgd_step(params: MLPParams, grads, velocity: Optional[list], cfg: SGDConfig):
    """``v <- mu v - lr (g + wd w)``; ``w <- w + v``.  Updates in place, returns ``(params, velocity)``."""
    arrays = params.arrays()
    flat_grads = [g for pair in grads for g in pair]
    if len(flat_grads) != len(arrays):
        raise ValueError("gradient list does not match parameters")
    if velocity is None:
        velocity = [np.zeros_like(a) for a in arrays]
    for w, g, v in zip(arrays, flat_grads, velocity):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape}")
        v *= cfg.momentum
        v -= cfg.learning_rate * (g + cfg.weight_decay * w)
        w += v
    return params, velocity


def loss_and_param_grads(params: MLPParams, X, y, stats: ClassStats, loss_cfg: LossConfig):
    logits, cache = forward(params, X)
    loss, dz = batch_loss_and_grad(logits, y, stats, loss_cfg)
    return loss, backward(params, cache, dz)


def train(
    params: MLPParams,
    X,
    y,
    stats: ClassStats,
    loss_cfg: LossConfig,
    sgd_cfg: SGDConfig,
) -> Tuple[MLPParams, List[float]]:
    """Shuffled minibatch training; returns the params and mean loss per epoch.

    ``params`` is updated in place.  The shuffle order comes from one RNG
    stream seeded by ``sgd_cfg.seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    if stats.num_classes != params.dims[-1]:
        raise ValueError("class stats do not match the network output size")
    rng = np.random.default_rng(sgd_cfg.seed)
    velocity = None
    trace = []
    for epoch in range(sgd_cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, sgd_cfg.batch_size)):
            idx = order[start : start + sgd_cfg.batch_size]
            try:
                loss, grads = loss_and_param_grads(params, X[idx], y[idx], stats, loss_cfg)
            except (FloatingPointError, ValueError) as exc:
                raise TrainingDiverged(epoch, b, str(exc)) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, b)
            total += loss * len(idx)
            params, velocity = sgd_step(params, grads, velocity, sgd_cfg)
        trace.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, trace[-1])
    return params, trace


def predict(params: MLPParams, X) -> np.ndarray:
    logits, _ = forward(params, X)
    return logits.argmax(axis=1)


@dataclass(frozen=True)
class GroupAccuracy:
    """Balanced accuracy overall and within each frequency group.

    A group with no classes is ``None`` rather than 0.
    """

    overall: float
    many: Optional[float] = None
    medium: Optional[float] = None
    few: Optional[float] = None


def per_class_accuracy(pred, y, num_classes: int) -> np.ndarray:
    pred, y = np.asarray(pred), np.asarray(y)
    hits = np.bincount(y, weights=(pred == y).astype(np.float64), minlength=num_classes)
    seen = np.bincount(y, minlength=num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return hits / seen


def group_accuracy(pred, y, groups: Sequence[str]) -> GroupAccuracy:
    """Macro accuracy: mean of per-class accuracies, overall and per group."""
    groups = np.asarray(groups)
    acc = per_class_accuracy(pred, y, len(groups))
    present = ~np.isnan(acc)
    if not present.any():
        raise ValueError("empty test set")
    out = {"overall": float(acc[present].mean())}
    for name in ("many", "medium", "few"):
        sel = present & (groups == name)
        if sel.any():
            out[name] = float(acc[sel].mean())
    return GroupAccuracy(**out)


def evaluate(params: MLPParams, X, y, groups: Sequence[str]) -> GroupAccuracy:
    """Score raw-logit argmax predictions on a balanced test set."""
    return group_accuracy(predict(params, X), y, groups)
