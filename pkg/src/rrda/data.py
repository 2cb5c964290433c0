"""Shifted-domain Gaussian blob scenarios and the plain-text feature format.

Labels are 0-based: known classes are ``0..K-1`` and target-private classes
``K..K+P-1``. Target labels are evaluation-only; training code receives an
:class:`UnlabeledView`, which has no label accessor.

Feature file layout (UTF-8, LF)::

    osda-features v1 <n> <dim> <has-labels>
    <x_1> <x_2> ... <x_dim> [<label>]
    ...

Floats are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

__all__ = [
    "ScenarioConfig",
    "LabeledSet",
    "UnlabeledView",
    "FeatureFileError",
    "MalformedHeaderError",
    "RowLengthError",
    "NonFiniteValueError",
    "generate_scenario",
    "write_features",
    "read_features",
]

HEADER_TAG = "osda-features"
HEADER_VERSION = "v1"


@dataclass
class ScenarioConfig:
    input_dim: int = 2
    n_known: int = 3
    n_private: int = 3
    samples_per_class: int = 200
    sigma: float = 0.5
    center_scale: float = 4.0
    min_separation: float = 4.0  # in units of sigma
    rotation_deg: float = 30.0
    translation: List[float] = field(default_factory=list)
    noise_sigma: float = 0.0
    max_tries: int = 10000

    def validate(self) -> None:
        if self.n_known < 2:
            raise ValueError("need at least 2 known classes")
        if self.n_private < 0:
            raise ValueError("private class count must be non-negative")
        if self.samples_per_class < 2:
            raise ValueError("need at least 2 samples per class")
        if self.input_dim < 2 and self.rotation_deg:
            raise ValueError("rotation needs input_dim >= 2")
        if self.translation and len(self.translation) != self.input_dim:
            raise ValueError("translation length must equal input_dim")


class UnlabeledView:
    """Read-only inputs of a dataset with the labels stripped."""

    __slots__ = ("_x",)

    def __init__(self, x):
        self._x = np.asarray(x, dtype=np.float64)

    @property
    def x(self) -> np.ndarray:
        return self._x

    def __len__(self) -> int:
        return len(self._x)


@dataclass
class LabeledSet:
    x: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (len(self.x),):
                raise ValueError("label count does not match sample count")
            if len(self.y) and self.y.min() < 0:
                raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.x)

    def unlabeled(self) -> UnlabeledView:
        return UnlabeledView(self.x)


def _rotation(dim: int, degrees: float) -> np.ndarray:
    r = np.eye(dim)
    if dim >= 2 and degrees:
        a = math.radians(degrees)
        r[:2, :2] = [[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]
    return r


def _place(rng, existing, count, cfg, min_dist):
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > cfg.max_tries:
            raise RuntimeError(
                f"could not place {count} centers with separation {min_dist:g} "
                f"inside scale {cfg.center_scale:g}; increase center_scale"
            )
        c = rng.uniform(-cfg.center_scale, cfg.center_scale, size=cfg.input_dim)
        if all(np.linalg.norm(c - e) >= min_dist for e in [*existing, *out]):
            out.append(c)
    return out


def generate_scenario(cfg: ScenarioConfig, seed: int = 0):
    """Return ``(source, target)`` labeled sets for one domain-shift scenario.

    The source holds K isotropic blobs. The target holds the same blobs moved
    by the rotation (first two axes, about the origin) and translation, plus
    ``n_private`` extra blobs whose centers keep at least
    ``min_separation * sigma`` from every other center in either domain.
    Known centers and source samples do not depend on ``n_private``.
    """
    cfg.validate()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    rng_known, rng_private, rng_source, rng_target = streams
    min_dist = cfg.min_separation * cfg.sigma
    known = np.array(_place(rng_known, [], cfg.n_known, cfg, min_dist))
    rot = _rotation(cfg.input_dim, cfg.rotation_deg)
    shift = np.asarray(cfg.translation or np.zeros(cfg.input_dim), dtype=np.float64)
    known_t = known @ rot.T + shift
    private = _place(rng_private, [*known, *known_t], cfg.n_private, cfg, min_dist)

    n = cfg.samples_per_class
    eps_s = rng_source.normal(0.0, cfg.sigma, size=(cfg.n_known, n, cfg.input_dim))
    src_x = (known[:, None, :] + eps_s).reshape(-1, cfg.input_dim)
    src_y = np.repeat(np.arange(cfg.n_known), n)

    eps_t = rng_target.normal(0.0, cfg.sigma, size=(cfg.n_known, n, cfg.input_dim))
    tgt_known = (known[:, None, :] + eps_t).reshape(-1, cfg.input_dim) @ rot.T + shift
    parts = [tgt_known]
    labels = [np.repeat(np.arange(cfg.n_known), n)]
    for j, c in enumerate(private):
        parts.append(c + rng_target.normal(0.0, cfg.sigma, size=(n, cfg.input_dim)))
        labels.append(np.full(n, cfg.n_known + j))
    tgt_x = np.concatenate(parts)
    if cfg.noise_sigma:
        tgt_x = tgt_x + rng_target.normal(0.0, cfg.noise_sigma, size=tgt_x.shape)
    return LabeledSet(src_x, src_y), LabeledSet(tgt_x, np.concatenate(labels))


class FeatureFileError(ValueError):
    pass


class MalformedHeaderError(FeatureFileError):
    pass


class RowLengthError(FeatureFileError):
    pass


class NonFiniteValueError(FeatureFileError):
    pass


def write_features(path, data: LabeledSet) -> None:
    x = np.asarray(data.x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        r, c = np.argwhere(~np.isfinite(x))[0]
        raise NonFiniteValueError(f"non-finite value at row {r}, col {c}")
    has_labels = data.y is not None
    lines = [f"{HEADER_TAG} {HEADER_VERSION} {x.shape[0]} {x.shape[1]} {int(has_labels)}"]
    for i, row in enumerate(x):
        fields = [repr(float(v)) for v in row]
        if has_labels:
            fields.append(str(int(data.y[i])))
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_features(path) -> LabeledSet:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedHeaderError("malformed header: file is empty")
    head = lines[0].split()
    try:
        if len(head) != 5 or head[0] != HEADER_TAG or head[1] != HEADER_VERSION:
            raise ValueError
        n, dim, has_labels = int(head[2]), int(head[3]), int(head[4])
        if n < 0 or dim < 1 or has_labels not in (0, 1):
            raise ValueError
    except ValueError:
        raise MalformedHeaderError(f"malformed header: {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != n:
        raise MalformedHeaderError(f"malformed header: declares {n} rows, file has {len(rows)}")
    width = dim + has_labels
    x = np.empty((n, dim))
    y = np.empty(n, dtype=np.int64) if has_labels else None
    for r, line in enumerate(rows):
        fields = line.split()
        if len(fields) != width:
            raise RowLengthError(f"row {r} has {len(fields)} fields, expected {width}")
        try:
            vals = [float(v) for v in fields[:dim]]
        except ValueError as exc:
            raise FeatureFileError(f"unparseable value in row {r}: {exc}") from None
        for c, v in enumerate(vals):
            if not math.isfinite(v):
                raise NonFiniteValueError(f"non-finite value at row {r}, col {c}")
        x[r] = vals
        if has_labels:
            try:
                y[r] = int(fields[dim])
            except ValueError:
                raise FeatureFileError(f"row {r} has a non-integer label {fields[dim]!r}") from None
    return LabeledSet(x, y)
