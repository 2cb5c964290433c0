"""Synthetic feature generation against a frozen source head.

Copies of target features are optimized with Adam. Unknown candidates climb
the source head's prediction entropy; known candidates descend the
cross-entropy towards one class at a time. Both objectives carry a variance
hinge that keeps the batch from collapsing. Candidates that clear the
thresholds are kept, and the unknown ones are split into ``k_prime``
pseudo-classes with k-means.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import LinearHead
from .numeric import Optimizer, cross_entropy, softmax_entropy, variance_hinge

__all__ = [
    "SynthConfig",
    "SyntheticSet",
    "NoCandidatesError",
    "EmptyClassWarning",
    "generate_unknown",
    "generate_known",
    "cluster_unknown",
    "kmeans",
    "build_synthetic_set",
]


@dataclass
class SynthConfig:
    lambda_reg: float = 1.0
    steps: int = 1000
    lr: float = 0.001
    ce_threshold_frac: float = 0.25
    ent_threshold_frac: float = 0.75
    eps_known: float = 1e-4
    eps_unknown: float = 1e-3
    init_noise_frac: float = 0.01
    k_prime: Optional[int] = None  # None means k_prime = K
    per_class_cap: int = 1000
    optimize: bool = True

    def validate(self) -> None:
        for name in ("ce_threshold_frac", "ent_threshold_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.k_prime is not None and self.k_prime < 1:
            raise ValueError("k_prime must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.per_class_cap < 1:
            raise ValueError("per_class_cap must be >= 1")


class NoCandidatesError(RuntimeError):
    """No optimized point passed the selection threshold.

    ``values`` holds the per-point entropies (unknown search) or
    cross-entropies (known search) that were compared to ``threshold``.
    """

    def __init__(self, message, values, threshold, class_index=None):
        q = np.quantile(values, [0.0, 0.5, 1.0]) if len(values) else [float("nan")] * 3
        super().__init__(f"{message} (threshold {threshold:.4f}; min/median/max {q[0]:.4f}/{q[1]:.4f}/{q[2]:.4f})")
        self.values = np.asarray(values)
        self.threshold = threshold
        self.class_index = class_index


class EmptyClassWarning(UserWarning):
    pass


@dataclass
class SyntheticSet:
    features: np.ndarray
    labels: np.ndarray
    n_known: int
    k_prime: int
    missing_classes: List[int] = field(default_factory=list)

    @property
    def provenance(self) -> List[str]:
        return [
            f"known({y})" if y < self.n_known else f"unknown-cluster({y - self.n_known})"
            for y in self.labels
        ]

    def __len__(self) -> int:
        return len(self.labels)


def _noisy_copy(features, cfg: SynthConfig, rng) -> np.ndarray:
    z = np.array(features, dtype=np.float64)
    if z.ndim != 2 or len(z) == 0:
        raise ValueError("features must be a non-empty 2-D array")
    if cfg.init_noise_frac:
        scale = cfg.init_noise_frac * z.std(axis=0)
        z = z + rng.normal(size=z.shape) * scale
    return z


def _optimize(z, objective, cfg: SynthConfig, eps: float):
    """Run Adam on the points; returns the loss recorded before each step."""
    params = {"z": z}
    opt = Optimizer.adam(lr=cfg.lr)
    trace = []
    for _ in range(cfg.steps):
        loss, grad = objective(params["z"])
        reg, reg_grad = variance_hinge(params["z"], eps)
        trace.append(loss + cfg.lambda_reg * reg)
        opt.step(params, {"z": grad + cfg.lambda_reg * reg_grad})
    return params["z"], np.array(trace)


def generate_unknown(features, head: LinearHead, cfg: SynthConfig, rng=None):
    """Maximize source-head entropy; keep points above the entropy threshold.

    Returns ``(selected, entropies, trace)`` where ``entropies`` are measured
    on every optimized point and ``trace`` is the per-step loss.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    z = _noisy_copy(features, cfg, rng)
    if len(z) < 2:
        raise ValueError("unknown synthesis needs at least 2 feature rows")
    w = head.weight

    def objective(pts):
        h, dh = softmax_entropy(head(pts))
        n = len(pts)
        return -h.mean(), -(dh @ w) / n

    trace = np.array([])
    if cfg.optimize:
        z, trace = _optimize(z, objective, cfg, cfg.eps_unknown)
    ent, _ = softmax_entropy(head(z))
    threshold = cfg.ent_threshold_frac * math.log(head.n_classes)
    keep = ent > threshold
    if not keep.any():
        raise NoCandidatesError("no unknown candidates", ent, threshold)
    return z[keep], ent, trace


def generate_known(features, head: LinearHead, class_index: int, cfg: SynthConfig, rng=None):
    """Minimize cross-entropy towards ``class_index``; keep confident points.

    At most ``per_class_cap`` points are returned (a seeded random subset,
    kept in input order). Returns ``(selected, ce_losses, trace)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if not 0 <= class_index < head.n_classes:
        raise IndexError(f"class {class_index} outside [0, {head.n_classes})")
    z = _noisy_copy(features, cfg, rng)
    if len(z) < 2:
        raise ValueError("known synthesis needs at least 2 feature rows")
    w = head.weight
    target = np.full(len(z), class_index)

    def objective(pts):
        ce, g = cross_entropy(head(pts), target)
        return ce.mean(), (g @ w) / len(pts)

    trace = np.array([])
    if cfg.optimize:
        z, trace = _optimize(z, objective, cfg, cfg.eps_known)
    ce, _ = cross_entropy(head(z), target)
    threshold = cfg.ce_threshold_frac * math.log(head.n_classes)
    idx = np.flatnonzero(ce < threshold)
    if len(idx) == 0:
        raise NoCandidatesError(f"no candidates for known class {class_index}", ce, threshold, class_index)
    if len(idx) > cfg.per_class_cap:
        idx = np.sort(rng.choice(idx, size=cfg.per_class_cap, replace=False))
    return z[idx], ce, trace


def _kmeanspp(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(x[i])
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _repair_empty(x, labels, centers, k):
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(((x[members] - centers[big]) ** 2).sum(axis=1))]
        labels[far] = empty
        counts[big] -= 1
        counts[empty] += 1
    return labels


def kmeans(x, k: int, rng, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding; returns ``(labels, centers)``.

    Empty clusters take the point of the largest cluster that lies farthest
    from its centroid. Distance ties go to the lowest cluster index.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"{len(x)} points cannot form {k} clusters; use a smaller k_prime")
    centers = _kmeanspp(x, k, rng)
    labels = np.zeros(len(x), dtype=np.intp)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = _repair_empty(x, np.argmin(d2, axis=1), centers, k)
        new = np.array([x[labels == j].mean(axis=0) for j in range(k)])
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift <= tol:
            break
    return labels, centers


def cluster_unknown(selected, k_prime: int, n_known: int, rng) -> np.ndarray:
    """K-means labels for the unknown candidates, offset to ``n_known..n_known+k_prime-1``."""
    if k_prime < 1:
        raise ValueError("k_prime must be >= 1")
    labels, _ = kmeans(selected, k_prime, rng)
    return labels + n_known


def build_synthetic_set(target_features, head: LinearHead, cfg: SynthConfig, seed: int = 0) -> SyntheticSet:
    """Generate known points for every source class plus clustered unknowns.

    A known class with no surviving points is skipped with an
    :class:`EmptyClassWarning` and listed in ``missing_classes``.
    """
    cfg.validate()
    n_known = head.n_classes
    k_prime = cfg.k_prime if cfg.k_prime is not None else n_known
    ss = np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(n_known + 2)]

    feats, labels, missing = [], [], []
    for k in range(n_known):
        try:
            pts, _, _ = generate_known(target_features, head, k, cfg, rngs[k])
        except NoCandidatesError as exc:
            warnings.warn(str(exc), EmptyClassWarning, stacklevel=2)
            missing.append(k)
            continue
        feats.append(pts)
        labels.append(np.full(len(pts), k))

    unk, _, _ = generate_unknown(target_features, head, cfg, rngs[n_known])
    feats.append(unk)
    labels.append(cluster_unknown(unk, k_prime, n_known, rngs[n_known + 1]))
    return SyntheticSet(np.concatenate(feats), np.concatenate(labels).astype(np.int64), n_known, k_prime, missing)
