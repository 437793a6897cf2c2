"""Synthetic long-tailed Gaussian blobs and class grouping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, NamedTuple

import numpy as np

from .losses import ClassStats


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 100
    max_count: int = 500
    imbalance_factor: float = 100.0
    input_dim: int = 16
    class_separation: float = 3.0
    noise_sigma: float = 0.5
    seed: int = 0
    test_per_class: int = 100

    def __post_init__(self):
        if self.num_classes < 3:
            raise ValueError(f"num_classes must be >= 3, got {self.num_classes}")
        if self.max_count < 10:
            raise ValueError(f"max_count must be >= 10, got {self.max_count}")
        if self.imbalance_factor < 1:
            raise ValueError(f"imbalance_factor must be >= 1, got {self.imbalance_factor}")
        if self.input_dim < 2:
            raise ValueError(f"input_dim must be >= 2, got {self.input_dim}")
        if self.class_separation <= 0 or self.noise_sigma <= 0:
            raise ValueError("class_separation and noise_sigma must be positive")
        if self.test_per_class < 1:
            raise ValueError("test_per_class must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


class Dataset(NamedTuple):
    features: np.ndarray  # (n, input_dim)
    labels: np.ndarray  # (n,)
    counts: np.ndarray  # (K,)


@dataclass(frozen=True)
class GroupThresholds:
    many_min: int = 100
    few_max: int = 20

    def __post_init__(self):
        if self.few_max >= self.many_min:
            raise ValueError(f"few_max ({self.few_max}) must be below many_min ({self.many_min})")


def exponential_class_counts(spec: DatasetSpec) -> np.ndarray:
    """``N_c = round(N_1 * mu**c)`` with ``mu = IF**(-1/(K-1))``, halves rounded up."""
    K = spec.num_classes
    c = np.arange(K)
    counts = np.floor(spec.max_count * spec.imbalance_factor ** (-c / (K - 1)) + 0.5).astype(np.int64)
    # endpoints exactly: the tail often sits on a .5 that pow() can land just below
    counts[0] = spec.max_count
    counts[-1] = math.floor(Fraction(spec.max_count) / Fraction(spec.imbalance_factor) + Fraction(1, 2))
    if counts.min() < 1:
        raise ValueError(
            f"max_count={spec.max_count} with imbalance_factor={spec.imbalance_factor} leaves a class with zero samples"
        )
    return counts


def class_centers(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random directions scaled to radius ``class_separation``."""
    v = rng.standard_normal((spec.num_classes, spec.input_dim))
    return spec.class_separation * v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample(centers, counts, sigma, rng) -> Dataset:
    labels = np.repeat(np.arange(len(counts)), counts)
    X = centers[labels] + sigma * rng.standard_normal((labels.size, centers.shape[1]))
    return Dataset(X, labels, np.asarray(counts, dtype=np.int64))


def generate(spec: DatasetSpec):
    """Train split with the exponential profile, balanced test split, train stats.

    Centers, train noise and test noise draw from independent child streams
    of ``spec.seed``.
    """
    center_rng, train_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3))
    centers = class_centers(spec, center_rng)
    counts = exponential_class_counts(spec)
    train = _sample(centers, counts, spec.noise_sigma, train_rng)
    test = _sample(centers, np.full(spec.num_classes, spec.test_per_class), spec.noise_sigma, test_rng)
    return train, test, ClassStats(counts)


def assign_groups(stats: ClassStats, thresholds: GroupThresholds = GroupThresholds()) -> List[str]:
    """``many`` if N_c >= many_min, ``few`` if N_c <= few_max, else ``medium``."""
    tags = []
    for n in stats.counts:
        if n >= thresholds.many_min:
            tags.append("many")
        elif n <= thresholds.few_max:
            tags.append("few")
        else:
            tags.append("medium")
    return tags


def write_csv(ds: Dataset, path) -> None:
    d = ds.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"feature_{i}" for i in range(d)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([format(v, ".17g") for v in x] + [int(y)])


def read_csv(path, num_classes: int = None) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "label" or not all(h == f"feature_{i}" for i, h in enumerate(header[:-1])):
        raise ValueError(f"{Path(path).name}: unexpected header {header}")
    arr = np.array(body, dtype=object)
    X = arr[:, :-1].astype(np.float64)
    y = arr[:, -1].astype(np.int64)
    K = num_classes if num_classes is not None else int(y.max()) + 1
    return Dataset(X, y, np.bincount(y, minlength=K))
