"""Base losses, the weighted total loss and gradients w.r.t. raw logits.

The arithmetic lives in :func:`batch_terms`, which works on a ``(B, K)``
block of logits.  The per-sample functions are thin views over it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import weighting


class Base(str, enum.Enum):
    CE = "ce"
    FOCAL = "focal"
    CB = "cb"
    LA = "la"
    BS = "bs"


ADJUSTED_BASES = (Base.LA, Base.BS)


@dataclass(frozen=True)
class ClassStats:
    """Training-split class counts and the quantities derived from them."""

    counts: np.ndarray
    total: int = field(init=False)
    frequencies: np.ndarray = field(init=False)
    log_priors: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("class counts must be a 1-d sequence with at least 2 classes")
        if np.any(counts < 1):
            empty = np.flatnonzero(counts < 1).tolist()
            raise ValueError(f"every class needs at least one training sample; empty classes: {empty}")
        total = int(counts.sum())
        freqs = counts / total
        if np.any(freqs >= 1.0):
            raise ValueError("degenerate class frequency 1: a single class holds all samples")
        for arr in (counts, freqs):
            arr.setflags(write=False)
        log_priors = np.log(freqs)
        log_priors.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", total)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "log_priors", log_priors)

    @classmethod
    def from_labels(cls, labels, num_classes: int) -> "ClassStats":
        return cls(np.bincount(np.asarray(labels), minlength=num_classes))

    @property
    def num_classes(self) -> int:
        return int(self.counts.size)


@dataclass(frozen=True)
class LossConfig:
    """Base loss choice plus the weighting switch.

    ``ccar_prob_source`` picks which probabilities feed the weight when the
    base works on adjusted logits.  ``focal_adjust`` ("la" or "bs") lets the
    focal base train on adjusted logits as well.
    """

    base: Base = Base.CE
    ccar: bool = False
    omega: float = 0.75
    focal_gamma: float = 2.0
    cb_beta: float = 0.9999
    la_tau: float = 1.0
    ccar_prob_source: str = "adjusted"
    focal_adjust: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "base", Base(self.base))
        weighting.PivotOmega(self.omega)
        if self.focal_gamma < 0:
            raise ValueError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 <= self.cb_beta < 1.0:
            raise ValueError(f"cb_beta must lie in [0, 1), got {self.cb_beta}")
        if self.la_tau <= 0:
            raise ValueError(f"la_tau must be > 0, got {self.la_tau}")
        if self.ccar_prob_source not in ("adjusted", "raw"):
            raise ValueError(f"ccar_prob_source must be 'adjusted' or 'raw', got {self.ccar_prob_source!r}")
        if self.focal_adjust is not None:
            if self.base is not Base.FOCAL:
                raise ValueError("focal_adjust only applies to the focal base")
            if self.focal_adjust not in ("la", "bs"):
                raise ValueError(f"focal_adjust must be 'la' or 'bs', got {self.focal_adjust!r}")

    @property
    def adjustment(self) -> Optional[Base]:
        if self.base in ADJUSTED_BASES:
            return self.base
        if self.focal_adjust is not None:
            return Base(self.focal_adjust)
        return None


class LossOutput(NamedTuple):
    loss: float
    grad_logits: np.ndarray
    weight_applied: float
    p_target: weighting.Confidence


def _check_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError(f"need at least 2 logits, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return z


def softmax(z) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = _check_logits(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = _check_logits(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def class_balanced_weights(stats: ClassStats, beta: float) -> np.ndarray:
    """``(1 - beta) / (1 - beta**N_c)`` rescaled to mean 1 over classes."""
    n = stats.counts.astype(np.float64)
    w = (1.0 - beta) / (1.0 - np.power(beta, n)) if beta > 0 else np.ones_like(n)
    return w * (w.size / w.sum())


def _base_value_and_slope(log_pt, pt, target_idx, stats, cfg):
    """Base loss and ``p_t * dL/dp_t`` per sample."""
    if cfg.base is Base.FOCAL:
        g = cfg.focal_gamma
        q = 1.0 - pt
        qg = np.power(q, g)
        loss = -qg * log_pt
        # p * q**(g-1) * ln p -> 0 as q -> 0 for every g > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(q > 0.0, g * pt * np.power(np.where(q > 0.0, q, 1.0), g - 1.0) * log_pt, 0.0)
        return loss, tail - qg
    loss = -log_pt
    slope = -np.ones_like(pt)
    if cfg.base is Base.CB:
        w = class_balanced_weights(stats, cfg.cb_beta)[target_idx]
        return w * loss, w * slope
    return loss, slope


def adjusted_logits(z, stats: ClassStats, cfg: LossConfig) -> np.ndarray:
    """Prior-shifted logits used at training time by LA and BS."""
    z = _check_logits(z)
    kind = cfg.adjustment
    if kind is None:
        raise ValueError(f"adjusted_logits called with base {cfg.base.value!r}, which trains on raw logits")
    if kind is Base.LA:
        return z + cfg.la_tau * stats.log_priors
    return z + np.log(stats.counts.astype(np.float64))


def base_loss(p, target: int, stats: ClassStats, cfg: LossConfig) -> float:
    """Base loss from a probability vector, for CE, FOCAL and CB only."""
    if cfg.base in ADJUSTED_BASES:
        raise ValueError(f"base {cfg.base.value!r} is adjusted-logit CE; use total_loss_and_grad")
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= target < p.shape[-1]:
        raise IndexError(f"target {target} out of range for {p.shape[-1]} classes")
    pt = p[target]
    with np.errstate(divide="ignore"):
        loss, _ = _base_value_and_slope(np.log(pt), pt, target, stats, cfg)
    return float(loss)


class BatchTerms(NamedTuple):
    loss: np.ndarray
    grad: np.ndarray
    weight: np.ndarray
    p_target: np.ndarray


def _raise_nonfinite(name, arr):
    bad = np.flatnonzero(~np.isfinite(np.asarray(arr).reshape(len(arr), -1)).all(axis=1))
    if bad.size:
        raise FloatingPointError(f"non-finite {name} for sample(s) {bad[:10].tolist()}")


def batch_terms(Z, targets, stats: ClassStats, cfg: LossConfig, *, ccar: Optional[bool] = None) -> BatchTerms:
    """Per-sample losses and logit gradients for a ``(B, K)`` block.

    The returned gradients are w.r.t. the raw logits ``Z``; the LA/BS shift is
    a constant so it passes straight through.
    """
    Z = _check_logits(np.atleast_2d(Z))
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    B, K = Z.shape
    if targets.size != B:
        raise ValueError(f"{targets.size} targets for {B} logit rows")
    if K != stats.num_classes:
        raise ValueError(f"logits have {K} classes, stats have {stats.num_classes}")
    if np.any((targets < 0) | (targets >= K)):
        raise IndexError("target index out of range")
    use_ccar = cfg.ccar if ccar is None else ccar
    rows = np.arange(B)

    train_z = adjusted_logits(Z, stats, cfg) if cfg.adjustment is not None else Z
    logp = log_softmax(train_z)
    P = np.exp(logp)
    log_pt = logp[rows, targets]
    pt = np.exp(log_pt)
    onehot = np.zeros_like(P)
    onehot[rows, targets] = 1.0

    loss, slope = _base_value_and_slope(log_pt, pt, targets, stats, cfg)
    _raise_nonfinite("base loss", loss)
    grad = slope[:, None] * (onehot - P)
    if not use_ccar:
        _raise_nonfinite("base gradient", grad)
        return BatchTerms(loss, grad, np.ones(B), pt)

    if cfg.adjustment is not None and cfg.ccar_prob_source == "raw":
        Q = softmax(Z)
    else:
        Q = P
    qt = Q[rows, targets]
    f = stats.frequencies[targets]
    # one log value feeds weight and derivative
    beta = weighting.adaptive_capacity(qt, f, cfg.omega)
    w = np.exp((cfg.omega - qt) * beta)
    dw = -beta * w
    _raise_nonfinite("weight", w)
    total = w * loss
    total_grad = w[:, None] * grad + (loss * dw * qt)[:, None] * (onehot - Q)
    _raise_nonfinite("total loss", total)
    _raise_nonfinite("total gradient", total_grad)
    return BatchTerms(total, total_grad, w, qt)


def total_loss_and_grad(z, target: int, stats: ClassStats, cfg: LossConfig) -> LossOutput:
    """Weighted loss of one sample and its gradient w.r.t. the raw logits."""
    z = _check_logits(z)
    if z.ndim != 1:
        raise ValueError("total_loss_and_grad takes a single logit vector")
    t = batch_terms(z[None, :], [target], stats, cfg)
    return LossOutput(
        float(t.loss[0]), t.grad[0], float(t.weight[0]), weighting.Confidence(float(min(t.p_target[0], 1.0)))
    )


def plain_loss_and_grad(z, target: int, stats: ClassStats, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Unweighted base loss and gradient, whatever ``cfg.ccar`` says."""
    t = batch_terms(np.asarray(z, float)[None, :], [target], stats, cfg, ccar=False)
    return float(t.loss[0]), t.grad[0]


def closed_form_gradient(z, target: int, stats: ClassStats, omega: float) -> np.ndarray:
    """Closed form ``psi * (p - e_t)`` for weighted plain cross-entropy."""
    p = softmax(z)
    pt = min(float(p[target]), 1.0)
    psi = weighting.modulation_factor(pt, stats.frequencies[target], omega)
    e_t = np.zeros_like(p)
    e_t[target] = 1.0
    return psi * (p - e_t)


def batch_loss_and_grad(Z, targets, stats: ClassStats, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient w.r.t. each row of ``Z``."""
    t = batch_terms(Z, targets, stats, cfg)
    B = t.loss.shape[0]
    return float(np.mean(t.loss)), t.grad / B


def central_difference(fn: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def finite_difference_grad(z, target: int, stats: ClassStats, cfg: LossConfig, step: float = 1e-6) -> np.ndarray:
    return central_difference(lambda v: total_loss_and_grad(v, target, stats, cfg).loss, z, step)


def relative_error(a, b) -> float:
    """``||a - b|| / max(||a||, ||b||)``, 0 when both vanish."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def config_grid(omega: float = 0.75) -> Sequence[LossConfig]:
    """All ten base x weighting combinations."""
    return [LossConfig(base=b, ccar=c, omega=omega) for b in Base for c in (False, True)]
