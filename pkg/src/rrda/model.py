"""MLP encoder, linear classifier heads, and model snapshots.

The encoder maps inputs to features with ReLU hidden layers and a linear
output layer; heads compute ``logits = z @ W.T + b``. Both expose explicit
backward passes so every loss downstream can be differentiated by hand.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .numeric import Optimizer, log_softmax

__all__ = [
    "Encoder",
    "LinearHead",
    "ModelSnapshot",
    "SourceConfig",
    "he_uniform",
    "train_source",
    "save_snapshot",
    "load_snapshot",
]

SNAPSHOT_FORMAT = "rrda-snapshot v1"


def he_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Encoder:
    """Multilayer perceptron ``R^X -> R^D``.

    Parameters are stored in ``params`` under ``layer{i}.weight`` (out x in)
    and ``layer{i}.bias``. Every layer but the last is followed by a ReLU.
    """

    def __init__(self, dims: Sequence[int], rng: Optional[np.random.Generator] = None):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid encoder dims {dims}")
        self.dims = dims
        self.params: Dict[str, np.ndarray] = {}
        rng = rng if rng is not None else np.random.default_rng(0)
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"layer{i}.weight"] = he_uniform(rng, d_out, d_in)
            self.params[f"layer{i}.bias"] = np.zeros(d_out)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def forward(self, x):
        """Return ``(features, cache)``; the cache holds each layer's input."""
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.dims[0]:
            raise ValueError(f"encoder expects (n, {self.dims[0]}) input, got {h.shape}")
        cache = []
        for i in range(self.n_layers):
            cache.append(h)
            h = h @ self.params[f"layer{i}.weight"].T + self.params[f"layer{i}.bias"]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
        return h, cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out) -> Dict[str, np.ndarray]:
        grads = {}
        g = grad_out
        for i in reversed(range(self.n_layers)):
            inp = cache[i]
            grads[f"layer{i}.weight"] = g.T @ inp
            grads[f"layer{i}.bias"] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[f"layer{i}.weight"]) * (inp > 0)
        return grads

    def copy(self) -> "Encoder":
        new = Encoder.__new__(Encoder)
        new.dims = list(self.dims)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new


class LinearHead:
    """Linear classifier with ``weight`` (C x D) and ``bias`` (C,)."""

    def __init__(self, weight, bias=None):
        weight = np.array(weight, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[0] < 2:
            raise ValueError("head needs a (C, D) weight with C >= 2")
        bias = np.zeros(weight.shape[0]) if bias is None else np.array(bias, dtype=np.float64)
        if bias.shape != (weight.shape[0],):
            raise ValueError("bias length must equal the class count")
        self.params = {"weight": weight, "bias": bias}

    @classmethod
    def random(cls, n_classes: int, dim: int, rng: np.random.Generator) -> "LinearHead":
        return cls(he_uniform(rng, n_classes, dim))

    @property
    def weight(self) -> np.ndarray:
        return self.params["weight"]

    @property
    def bias(self) -> np.ndarray:
        return self.params["bias"]

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise ValueError(f"head expects (n, {self.dim}) features, got {z.shape}")
        return z @ self.weight.T + self.bias

    def backward(self, z, grad_logits):
        """Return ``(param_grads, grad_z)`` for ``logits = head(z)``."""
        grads = {"weight": grad_logits.T @ z, "bias": grad_logits.sum(axis=0)}
        return grads, grad_logits @ self.weight

    def copy(self) -> "LinearHead":
        return LinearHead(self.weight.copy(), self.bias.copy())


@dataclass
class ModelSnapshot:
    encoder: Encoder
    head: LinearHead
    n_known: int
    k_prime: int = 0
    seed: int = 0
    stage: str = "source"
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.encoder.out_dim

    def logits(self, x) -> np.ndarray:
        return self.head(self.encoder(x))

    def copy(self) -> "ModelSnapshot":
        return ModelSnapshot(
            self.encoder.copy(), self.head.copy(), self.n_known, self.k_prime,
            self.seed, self.stage, dict(self.meta),
        )


def _encode_block(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_block(block: dict) -> np.ndarray:
    raw = base64.b64decode(block["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(block["shape"])


def snapshot_to_dict(snap: ModelSnapshot) -> dict:
    return {
        "format": SNAPSHOT_FORMAT,
        "stage": snap.stage,
        "seed": int(snap.seed),
        "n_known": int(snap.n_known),
        "k_prime": int(snap.k_prime),
        "encoder_dims": list(snap.encoder.dims),
        "n_classes": snap.head.n_classes,
        "meta": snap.meta,
        "encoder": {k: _encode_block(v) for k, v in snap.encoder.params.items()},
        "head": {k: _encode_block(v) for k, v in snap.head.params.items()},
    }


def snapshot_from_dict(d: dict) -> ModelSnapshot:
    if d.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"not a model snapshot (format={d.get('format')!r})")
    enc = Encoder.__new__(Encoder)
    enc.dims = [int(x) for x in d["encoder_dims"]]
    enc.params = {k: _decode_block(v) for k, v in d["encoder"].items()}
    head = LinearHead(_decode_block(d["head"]["weight"]), _decode_block(d["head"]["bias"]))
    return ModelSnapshot(enc, head, d["n_known"], d["k_prime"], d["seed"], d["stage"], d.get("meta", {}))


def save_snapshot(snap: ModelSnapshot, path) -> None:
    text = json.dumps(snapshot_to_dict(snap), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_snapshot(path) -> ModelSnapshot:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"snapshot not found: {path}")
    return snapshot_from_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass
class SourceConfig:
    hidden: List[int] = field(default_factory=lambda: [64, 32])
    feature_dim: int = 16
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.01
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1


def smoothed_cross_entropy(logits, y, n_classes: int, smoothing: float):
    """Per-row cross-entropy against ``(1 - s) * onehot + s / K`` and its logit gradient."""
    logp = log_softmax(logits)
    target = np.full(logp.shape, smoothing / n_classes)
    target[np.arange(len(y)), y] += 1.0 - smoothing
    return -(target * logp).sum(axis=1), np.exp(logp) - target


def train_source(x, y, n_classes: int, cfg: Optional[SourceConfig] = None, seed: int = 0):
    """Train encoder + K-way head with mini-batch Adam on label-smoothed cross-entropy.

    Returns ``(snapshot, epoch_losses)``.
    """
    cfg = cfg or SourceConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if len(x) == 0:
        raise ValueError("source training set is empty")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"source labels must lie in [0, {n_classes})")
    rng = np.random.default_rng(seed)
    enc = Encoder([x.shape[1], *cfg.hidden, cfg.feature_dim], rng)
    head = LinearHead.random(n_classes, cfg.feature_dim, rng)
    opt_enc = Optimizer.adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt_head = Optimizer.adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            z, cache = enc.forward(x[idx])
            loss, g = smoothed_cross_entropy(head(z), y[idx], n_classes, cfg.label_smoothing)
            g = g / len(idx)
            head_grads, gz = head.backward(z, g)
            enc_grads = enc.backward(cache, gz)
            opt_head.step(head.params, head_grads)
            opt_enc.step(enc.params, enc_grads)
            total += loss.sum()
        losses.append(total / len(x))
    snap = ModelSnapshot(enc, head, n_classes, 0, seed, "source")
    return snap, losses
