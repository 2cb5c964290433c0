"""Numerical primitives: softmax, entropies, the variance hinge, optimizers and
a finite-difference gradient checker.

Every loss here comes with a hand-derived gradient. Functions operate on
float64 numpy arrays; row-wise functions accept either a single vector or a
2-D batch (one sample per row).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

__all__ = [
    "softmax",
    "log_softmax",
    "entropy",
    "softmax_entropy",
    "cross_entropy",
    "variance_hinge",
    "grad_check",
    "Optimizer",
]


def _as_float(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def log_softmax(logits) -> np.ndarray:
    logits = _as_float(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    logits = _as_float(logits)
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def entropy(p, tol: float = 1e-6) -> np.ndarray:
    """Shannon entropy in nats of probability vector(s), with 0 log 0 = 0."""
    p = _as_float(p)
    if np.any(p < 0):
        raise ValueError("probability vector has a negative entry")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise ValueError("probability vector does not sum to 1")
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def softmax_entropy(logits) -> Tuple[np.ndarray, np.ndarray]:
    """Entropy of ``softmax(logits)`` per row and its gradient w.r.t. the logits.

    Uses ``dH/dl = -p * (log p + H)``.
    """
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=-1)
    grad = -p * (logp + h[..., None])
    return h, grad


def cross_entropy(logits, target) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-entropy ``-log softmax(logits)[target]`` and its logit gradient.

    ``target`` is an int for a single vector or an int array for a batch.
    The gradient is ``softmax(logits) - onehot(target)`` per row.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    logits2 = np.atleast_2d(logits)
    target = np.atleast_1d(np.asarray(target))
    n, c = logits2.shape
    if target.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {target.shape}")
    if np.any(target < 0) or np.any(target >= c):
        raise IndexError(f"target class out of range for {c} logits")
    target = target.astype(np.intp)
    logp = log_softmax(logits2)
    rows = np.arange(n)
    loss = -logp[rows, target]
    grad = np.exp(logp)
    grad[rows, target] -= 1.0
    if single:
        return loss[0], grad[0]
    return loss, grad


def variance_hinge(batch, eps: float) -> Tuple[float, np.ndarray]:
    """Mean over features of ``max(0, 1 - sqrt(var + eps))``.

    The variance is the population variance of each column across rows.
    Returns the value and its gradient w.r.t. ``batch``; the inactive side of
    the hinge has zero gradient.
    """
    z = _as_float(batch)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("variance_hinge needs a 2-D batch with at least 2 rows")
    n, d = z.shape
    centered = z - z.mean(axis=0)
    var = (centered**2).mean(axis=0)
    root = np.sqrt(var + eps)
    slack = 1.0 - root
    active = slack > 0
    value = float(np.where(active, slack, 0.0).mean())
    # d(-sqrt(v+eps))/dv = -1/(2 root); dv/dz_ij = 2 (z_ij - mean_j) / n
    coef = np.where(active, -1.0 / (root * n * d), 0.0)
    return value, centered * coef


def grad_check(
    fun: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    params,
    h: float = 1e-5,
) -> float:
    """Largest relative error between ``fun``'s gradient and central differences.

    ``fun(x)`` must return ``(value, grad)`` with ``grad`` shaped like ``x``.
    The error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    x0 = np.array(params, dtype=np.float64)
    _, analytic = fun(x0.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        step = flat.copy()
        step[i] += h
        fp = fun(step.reshape(x0.shape))[0]
        step[i] -= 2 * h
        fm = fun(step.reshape(x0.shape))[0]
        out[i] = (fp - fm) / (2 * h)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class Optimizer:
    """SGD with momentum or Adam over a dict of named parameter arrays.

    Weight decay is classic L2: ``weight_decay * param`` is added to the
    gradient before the update. Parameters are updated in place.
    """

    kind: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.0
    beta2: float = 0.999
    weight_decay: float = 0.0
    adam_eps: float = 1e-8
    step_count: int = 0
    buffers: Dict[str, Tuple[np.ndarray, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("momentum/beta values must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")

    @classmethod
    def adam(cls, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, **kw):
        return cls(kind="adam", lr=lr, momentum=beta1, beta2=beta2, **kw)

    @classmethod
    def sgd(cls, lr: float = 0.01, momentum: float = 0.0, **kw):
        return cls(kind="sgd", lr=lr, momentum=momentum, **kw)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.kind == "sgd":
                if self.momentum:
                    buf = self.buffers.get(name)
                    # first step seeds the buffer with the raw gradient
                    v = g.copy() if buf is None else self.momentum * buf[0] + g
                    self.buffers[name] = (v,)
                    g = v
                p -= self.lr * g
            else:
                m, v = self.buffers.get(name, (np.zeros_like(p), np.zeros_like(p)))
                m = self.momentum * m + (1 - self.momentum) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                self.buffers[name] = (m, v)
                m_hat = m / (1 - self.momentum**t)
                v_hat = v / (1 - self.beta2**t)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + self.adam_eps)
