"""The extended (K + K')-way target head: initialization, training, prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LinearHead, he_uniform
from .numeric import Optimizer, cross_entropy
from .synthgen import SyntheticSet

__all__ = ["ClassifierConfig", "init_target_head", "train_target_head", "predict", "aggregate"]


@dataclass
class ClassifierConfig:
    epochs: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.001
    batch_size: int = 128
    init_mode: str = "source"


def init_target_head(source: LinearHead, k_prime: int, init_mode: str = "source", rng=None) -> LinearHead:
    """Build a head with ``K + k_prime`` rows.

    In ``"source"`` mode rows ``0..K-1`` (weights and bias) are copies of the
    source head and the new rows are He-uniform with zero bias. In
    ``"random"`` mode every row is freshly drawn.
    """
    if k_prime < 1:
        raise ValueError("k_prime must be >= 1")
    if init_mode not in ("source", "random"):
        raise ValueError(f"init_mode must be 'source' or 'random', got {init_mode!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    k, d = source.weight.shape
    if init_mode == "random":
        return LinearHead(he_uniform(rng, k + k_prime, d))
    weight = np.vstack([source.weight, he_uniform(rng, k_prime, d)])
    bias = np.concatenate([source.bias, np.zeros(k_prime)])
    return LinearHead(weight, bias)


def train_target_head(head: LinearHead, synth: SyntheticSet, cfg: ClassifierConfig = None, rng=None):
    """Fit ``head`` on the synthetic set with mini-batch SGD; updates ``head`` in place.

    Returns ``(head, epoch_losses)``; each loss is the mean cross-entropy over
    the epoch's samples.
    """
    cfg = cfg or ClassifierConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if len(synth) == 0:
        raise ValueError("synthetic set is empty")
    z, y = synth.features, synth.labels
    if y.max() >= head.n_classes:
        raise ValueError(f"synthetic label {y.max()} exceeds head size {head.n_classes}")
    opt = Optimizer.sgd(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g = cross_entropy(head(z[idx]), y[idx])
            grads, _ = head.backward(z[idx], g / len(idx))
            opt.step(head.params, grads)
            total += loss.sum()
        losses.append(total / len(y))
    return head, losses


def aggregate(raw, n_known: int) -> np.ndarray:
    """Map raw classes ``>= n_known`` onto the single unknown label ``n_known``."""
    raw = np.asarray(raw)
    return np.where(raw < n_known, raw, n_known)


def predict(head: LinearHead, z, n_known: int):
    """Return ``(raw, aggregated)`` predictions; argmax ties go to the lowest index."""
    raw = np.argmax(head(z), axis=1)
    return raw, aggregate(raw, n_known)
