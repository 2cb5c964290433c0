"""Adapting the whole model to unlabeled target data.

Two objectives are supported:

``shot``
    Information maximization (mean prediction entropy minus marginal
    entropy) plus cross-entropy against centroid pseudo-labels. The head is
    frozen and only the encoder trains.
``aad``
    Attraction of each prediction towards those of its feature-space
    neighbours in a memory bank, dispersion against the rest of the batch.
    Encoder and head both train, the encoder at a reduced learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .classifier import aggregate
from .metrics import open_set_metrics
from .model import ModelSnapshot
from .numeric import Optimizer, cross_entropy, log_softmax, softmax, softmax_entropy

__all__ = [
    "AdaptConfig",
    "MemoryBank",
    "shot_loss",
    "shot_pseudo_labels",
    "aad_loss",
    "softmax_backward",
    "adapt_shot",
    "adapt_aad",
    "adapt",
]


@dataclass
class AdaptConfig:
    method: str = "shot"
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    lambda_ent: float = 0.5
    lambda_div: float = 1.0
    lambda_ps: float = 0.3
    full_marginal: bool = False
    aad_lambda: float = 1.0
    aad_decay: bool = False
    aad_beta: float = 5.0
    knn_size: int = 3
    encoder_lr_scale: float = 0.1

    def validate(self) -> None:
        if self.method not in ("shot", "aad"):
            raise ValueError(f"unknown adaptation method {self.method!r}")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr must be >= 0, batch_size >= 1, epochs >= 0")
        if self.knn_size < 1:
            raise ValueError("knn_size must be >= 1")


def softmax_backward(p, grad_p) -> np.ndarray:
    """Push a gradient w.r.t. softmax outputs back onto the logits."""
    return p * (grad_p - (grad_p * p).sum(axis=1, keepdims=True))


def shot_loss(logits, pseudo, lambda_ent=0.5, lambda_div=1.0, lambda_ps=0.3,
              marginal_rest=None, n_total=None):
    """SHOT objective on a batch of logits.

    ``lambda_ent * mean_i H(p_i) + lambda_div * sum_k pbar_k log pbar_k
    + lambda_ps * mean_i CE(logits_i, pseudo_i)``.

    ``pbar`` is the batch mean of the predictions unless ``marginal_rest`` (the
    summed predictions of every sample outside the batch) and ``n_total`` are
    given, in which case it is the full-dataset mean with gradient flowing
    through the batch only. ``pseudo=None`` drops the pseudo-label term.

    Returns ``(loss, grad_logits, terms)``.
    """
    logp = log_softmax(logits)
    p = np.exp(logp)
    n = len(p)
    h, dh = softmax_entropy(logits)
    ent = lambda_ent * h.mean()
    grad = lambda_ent * dh / n

    total = float(n) if n_total is None else float(n_total)
    psum = p.sum(axis=0) if marginal_rest is None else p.sum(axis=0) + marginal_rest
    pbar = psum / total
    # 0 log 0 = 0; the clamp keeps the (zero-weighted) gradient entries finite
    log_pbar = np.log(np.maximum(pbar, np.finfo(np.float64).tiny))
    div = lambda_div * float((pbar * log_pbar).sum())
    grad += softmax_backward(p, np.broadcast_to(lambda_div * (log_pbar + 1.0) / total, p.shape))

    ps = 0.0
    if pseudo is not None and lambda_ps:
        ce, gce = cross_entropy(logits, pseudo)
        ps = lambda_ps * ce.mean()
        grad += lambda_ps * gce / n
    return ent + div + ps, grad, {"ent": ent, "div": div, "ps": ps}


def _unit_rows(x) -> np.ndarray:
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


def _nearest_centroid(fn, centroids, labelset):
    sim = fn @ _unit_rows(centroids[labelset]).T
    # cosine distance; np.argmin keeps the lowest class index on ties
    return labelset[np.argmin(1.0 - sim, axis=1)]


def shot_pseudo_labels(features, logits) -> np.ndarray:
    """Centroid pseudo-labels by cosine distance, two rounds.

    Round one uses prediction-weighted centroids over classes that are the
    argmax of at least one sample; round two recomputes centroids from the
    round-one hard assignments.
    """
    fn = _unit_rows(np.asarray(features, dtype=np.float64))
    p = softmax(logits)
    n_classes = p.shape[1]
    mass = p.sum(axis=0)
    centroids = (p.T @ fn) / np.maximum(mass, 1e-300)[:, None]
    counts = np.bincount(np.argmax(p, axis=1), minlength=n_classes)
    labelset = np.flatnonzero((counts > 0) & (mass > 0))
    pred = _nearest_centroid(fn, centroids, labelset)

    onehot = np.eye(n_classes)[pred]
    counts = onehot.sum(axis=0)
    centroids = (onehot.T @ fn) / np.maximum(counts, 1.0)[:, None]
    return _nearest_centroid(fn, centroids, np.flatnonzero(counts > 0))


class MemoryBank:
    """Per-sample cache of the latest features and predictions."""

    def __init__(self, features, probs):
        self.features = np.array(features, dtype=np.float64)
        self.probs = np.array(probs, dtype=np.float64)
        if len(self.features) != len(self.probs):
            raise ValueError("bank features and probs must have one row per sample")

    def __len__(self) -> int:
        return len(self.features)

    def update(self, indices, features, probs) -> None:
        self.features[indices] = features
        self.probs[indices] = probs

    def neighbors(self, indices, k: int) -> np.ndarray:
        """``k`` most cosine-similar bank rows for each index, excluding itself.

        Ties go to the lower bank index.
        """
        if len(self) < k + 1:
            raise ValueError(f"memory bank of size {len(self)} cannot supply {k} neighbours")
        fn = _unit_rows(self.features)
        sim = fn[indices] @ fn.T
        sim[np.arange(len(indices)), indices] = -np.inf
        order = np.argsort(-sim, axis=1, kind="stable")
        return order[:, :k]


def aad_loss(probs, indices, bank: MemoryBank, knn_size: int = 3, lam: float = 1.0):
    """Attraction/dispersion loss for one batch, averaged over the batch.

    For sample ``i`` the loss is ``-sum_{j in C_i} p_i . q_j + lam *
    sum_{m in B_i} p_i . p_m`` where ``C_i`` are the bank neighbours of ``i``
    (their bank predictions ``q_j`` are treated as constants) and ``B_i`` the
    other batch members whose dataset index is not in ``C_i``.

    Returns ``(loss, grad_probs, neighbors)``.
    """
    p = np.asarray(probs, dtype=np.float64)
    indices = np.asarray(indices)
    n = len(p)
    nbrs = bank.neighbors(indices, knn_size)
    attract = bank.probs[nbrs].sum(axis=1)
    disperse = np.ones((n, n)) - np.eye(n)
    disperse[(nbrs[:, :, None] == indices[None, None, :]).any(axis=1)] = 0.0
    pp = p @ p.T
    loss = (-(p * attract).sum() + lam * (disperse * pp).sum()) / n
    grad = (-attract + lam * (disperse @ p + disperse.T @ p)) / n
    return float(loss), grad, nbrs


def _forward_all(snap: ModelSnapshot, x):
    z = snap.encoder(x)
    return z, snap.head(z)


def _epoch_record(epoch, loss, snap, x, eval_labels) -> Dict:
    rec = {"epoch": epoch, "loss": None if loss is None else float(loss)}
    if eval_labels is not None:
        raw = np.argmax(snap.logits(x), axis=1)
        m = open_set_metrics(aggregate(raw, snap.n_known), eval_labels, snap.n_known)
        rec.update({"os_star": m["os_star"], "unk": m["unk"], "hos": m["hos"]})
    return rec


def adapt_shot(snapshot: ModelSnapshot, x, cfg: AdaptConfig, rng=None, eval_labels=None):
    """Train the encoder with the SHOT objective, head frozen.

    ``eval_labels`` is only used to add OS*/UNK/HOS to the per-epoch trace.
    Returns ``(adapted_snapshot, trace)``; ``trace[0]`` is the state before
    training.
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("target data is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    snap = snapshot.copy()
    enc, head = snap.encoder, snap.head
    opt = Optimizer.sgd(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    trace = [_epoch_record(0, None, snap, x, eval_labels)]
    for epoch in range(1, cfg.epochs + 1):
        z_all, logits_all = _forward_all(snap, x)
        pseudo = shot_pseudo_labels(z_all, logits_all) if cfg.lambda_ps else None
        p_cached = softmax(logits_all) if cfg.full_marginal else None
        p_total = p_cached.sum(axis=0) if cfg.full_marginal else None
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            z, cache = enc.forward(x[idx])
            kw = {}
            if cfg.full_marginal:
                kw = {"marginal_rest": p_total - p_cached[idx].sum(axis=0), "n_total": len(x)}
            loss, gl, _ = shot_loss(
                head(z), None if pseudo is None else pseudo[idx],
                cfg.lambda_ent, cfg.lambda_div, cfg.lambda_ps, **kw,
            )
            opt.step(enc.params, enc.backward(cache, gl @ head.weight))
            total += loss * len(idx)
        trace.append(_epoch_record(epoch, total / len(x), snap, x, eval_labels))
    snap.stage = "adapted-shot"
    return snap, trace


def adapt_aad(snapshot: ModelSnapshot, x, cfg: AdaptConfig, rng=None, eval_labels=None, on_step=None):
    """Train encoder and head with the attraction/dispersion objective.

    The bank is filled by one full pass, then refreshed with each batch's
    features and predictions before its loss is computed. ``on_step``, if
    given, is called as ``on_step(indices, features, bank)`` after every
    update.
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("target data is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    snap = snapshot.copy()
    enc, head = snap.encoder, snap.head
    opt_enc = Optimizer.sgd(lr=cfg.lr * cfg.encoder_lr_scale, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    opt_head = Optimizer.sgd(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    z_all, logits_all = _forward_all(snap, x)
    bank = MemoryBank(z_all, softmax(logits_all))
    steps_per_epoch = math.ceil(len(x) / cfg.batch_size)
    max_steps = max(1, cfg.epochs * steps_per_epoch)
    step = 0
    trace = [_epoch_record(0, None, snap, x, eval_labels)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lam = cfg.aad_lambda
            if cfg.aad_decay:
                lam *= (1 + 10 * step / max_steps) ** (-cfg.aad_beta)
            z, cache = enc.forward(x[idx])
            logits = head(z)
            p = softmax(logits)
            bank.update(idx, z, p)
            loss, gp, _ = aad_loss(p, idx, bank, cfg.knn_size, lam)
            gl = softmax_backward(p, gp)
            head_grads, gz = head.backward(z, gl)
            opt_enc.step(enc.params, enc.backward(cache, gz))
            opt_head.step(head.params, head_grads)
            total += loss * len(idx)
            step += 1
            if on_step is not None:
                on_step(idx, z, bank)
        trace.append(_epoch_record(epoch, total / len(x), snap, x, eval_labels))
    snap.stage = "adapted-aad"
    return snap, trace


def adapt(snapshot: ModelSnapshot, x, cfg: AdaptConfig, rng=None, eval_labels=None):
    if cfg.method == "shot":
        return adapt_shot(snapshot, x, cfg, rng, eval_labels)
    return adapt_aad(snapshot, x, cfg, rng, eval_labels)
