"""Open-set evaluation: OS*, UNK, HOS, and the source-only entropy baseline."""

from __future__ import annotations

import math
from typing import Dict

import numpy as np

from .numeric import softmax_entropy

__all__ = ["hos", "open_set_metrics", "threshold_baseline", "UndefinedMetricError"]


class UndefinedMetricError(ValueError):
    pass


def hos(os_star: float, unk: float) -> float:
    """Harmonic mean of known and unknown accuracy (0 when both are 0)."""
    if os_star + unk == 0:
        return 0.0
    return 2.0 * os_star * unk / (os_star + unk)


def open_set_metrics(pred, truth, n_known: int, per_class: bool = True) -> Dict[str, float]:
    """Compute ``{"os_star", "unk", "hos"}`` from aggregated predictions.

    ``truth`` may carry individual private-class labels; anything
    ``>= n_known`` counts as the unknown class ``n_known``. OS* is the mean
    per-class recall over known classes present in ``truth``; pass
    ``per_class=False`` for plain accuracy over known samples instead.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction/truth length mismatch: {pred.shape} vs {truth.shape}")
    pred = np.where(pred < n_known, pred, n_known)
    truth = np.where(truth < n_known, truth, n_known)
    unknown = truth == n_known
    if not unknown.any():
        raise UndefinedMetricError("no unknown samples in truth; HOS is undefined")
    if unknown.all():
        raise UndefinedMetricError("no known samples in truth; HOS is undefined")
    if per_class:
        recalls = [np.mean(pred[truth == k] == k) for k in range(n_known) if np.any(truth == k)]
        os_star = float(np.mean(recalls))
    else:
        os_star = float(np.mean(pred[~unknown] == truth[~unknown]))
    unk = float(np.mean(pred[unknown] == n_known))
    return {"os_star": os_star, "unk": unk, "hos": hos(os_star, unk)}


def threshold_predict(logits, tau_frac: float) -> np.ndarray:
    """Argmax over the K source classes, or K when entropy exceeds ``tau_frac * log K``."""
    if not 0.0 < tau_frac < 1.0:
        raise ValueError("tau_frac must lie in (0, 1)")
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[1]
    ent, _ = softmax_entropy(logits)
    return np.where(ent > tau_frac * math.log(k), k, np.argmax(logits, axis=1))


def threshold_baseline(snapshot, x, truth, tau_frac: float = 0.5, per_class: bool = True):
    """Source-only open-set metrics using the entropy-threshold rule."""
    logits = snapshot.logits(x)
    pred = threshold_predict(logits, tau_frac)
    return open_set_metrics(pred, truth, logits.shape[1], per_class=per_class)
