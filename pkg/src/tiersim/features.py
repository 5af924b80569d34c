"""Feature vectors and class labels built from per-file access history.

Vector layout (length ``k + 3``)::

    0      size / max_file_size                      (clamped to 1)
    1      t_ref - created_at
    2      t_ref - last access                        *
    3      oldest access - created_at                 *
    4..    gaps between consecutive accesses,         *
           most recent gap first

Time deltas are divided by ``max_interval`` and clamped to 1.  Slots marked
``*`` hold ``missing`` when the file has too few accesses before ``t_ref``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .simcore import GB, FileMeta

MONTH = 30 * 24 * 3600.0


class FeatureError(ValueError):
    pass


class InvalidReference(FeatureError):
    pass


class FutureWindow(FeatureError):
    pass


class TooYoung(FeatureError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    k: int = 12
    max_interval: float = MONTH
    missing: float = -1.0
    max_file_size: float = 10 * GB
    use_size: bool = True
    use_creation: bool = True

    def __post_init__(self) -> None:
        if self.k < 1 or self.max_interval <= 0:
            raise ValueError("k must be >= 1 and max_interval > 0")
        if 0.0 <= self.missing <= 1.0:
            raise ValueError("missing sentinel must lie outside [0, 1]")

    @property
    def width(self) -> int:
        return self.k + 3


@dataclass(frozen=True)
class TrainingPoint:
    features: tuple[float, ...]
    label: int
    reference_time: float
    file_id: int = -1

    def to_json(self) -> str:
        return json.dumps({"features": list(self.features), "label": self.label,
                           "t_ref": self.reference_time, "file": self.file_id})


def _accesses_before(meta: FileMeta, t_ref: float, k: int) -> list[float]:
    acc = [a for a in meta.access_times if a < t_ref]
    return acc[-k:]


def build_features(meta: FileMeta, t_ref: float, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    if t_ref < meta.created_at:
        raise InvalidReference(f"t_ref {t_ref} precedes creation {meta.created_at}")
    scale = cfg.max_interval
    out = np.full(cfg.width, cfg.missing, dtype=float)
    if cfg.use_size:
        out[0] = min(meta.size / cfg.max_file_size, 1.0)
    if cfg.use_creation:
        out[1] = min((t_ref - meta.created_at) / scale, 1.0)
    acc = _accesses_before(meta, t_ref, cfg.k)
    if acc:
        out[2] = min((t_ref - acc[-1]) / scale, 1.0)
        if cfg.use_creation:
            out[3] = min((acc[0] - meta.created_at) / scale, 1.0)
        gaps = np.diff(acc)[::-1]
        out[4:4 + len(gaps)] = np.minimum(gaps / scale, 1.0)
    return out


def label(meta: FileMeta, t_ref: float, w: float, now: float | None = None) -> int:
    """1 iff the file was accessed in the half-open window (t_ref, t_ref + w]."""
    if now is not None and t_ref + w > now:
        raise FutureWindow(f"window end {t_ref + w} is after now={now}")
    hi = t_ref + w
    return int(any(t_ref < a <= hi for a in meta.access_times))


def sample_training_point(meta: FileMeta, now: float, w: float,
                          cfg: FeatureConfig = FeatureConfig()) -> TrainingPoint:
    t_ref = now - w
    if t_ref < meta.created_at:
        raise TooYoung(f"file {meta.file_id} younger than window")
    x = build_features(meta, t_ref, cfg)
    return TrainingPoint(tuple(x.tolist()), label(meta, t_ref, w, now), t_ref, meta.file_id)


def on_access_positive_sample(meta: FileMeta, now: float, w: float,
                              cfg: FeatureConfig = FeatureConfig()) -> TrainingPoint:
    """Point emitted right after an access at ``now``; its label is 1 by construction."""
    point = sample_training_point(meta, now, w, cfg)
    assert point.label == 1, "triggering access must fall in the window"
    return point


def dump_points(points: Iterable[TrainingPoint], path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in points:
            fh.write(p.to_json() + "\n")


def load_points(path: str | Path) -> list[TrainingPoint]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(TrainingPoint(tuple(d["features"]), int(d["label"]),
                                         float(d["t_ref"]), int(d.get("file", -1))))
    return out
