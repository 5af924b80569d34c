"""Recency/frequency/size driven downgrade and upgrade policies.

Downgrade: LRU, LFU, LRFU, LIFE, LFU-F, EXD.  Upgrade: OSA, LRFU, EXD.

LRFU and EXD keep a per-file weight that starts at 1 on creation and is
updated only when the file is accessed::

    LRFU:  W <- 1 + H * W / ((now - last) + H)
    EXD:   W <- 1 + W * exp(-alpha * (now - last))
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .policyapi import DowngradePolicy, UpgradePolicy
from .simcore import FileMeta, TierKind

HOUR = 3600.0

DEFAULT_HALF_LIFE = 6 * HOUR
DEFAULT_ALPHA = 1.16e-8
DEFAULT_OLD_WINDOW = 9 * HOUR
DEFAULT_LRFU_UPGRADE_THRESHOLD = 3.0


class EmptyCandidates(ValueError):
    pass


def lrfu_update(weight: float, last_access: float, now: float,
                half_life: float = DEFAULT_HALF_LIFE) -> float:
    return 1.0 + half_life * weight / ((now - last_access) + half_life)


def exd_update(weight: float, last_access: float, now: float,
               alpha: float = DEFAULT_ALPHA) -> float:
    return 1.0 + weight * math.exp(-alpha * (now - last_access))


class WeightTable:
    """Per-file (weight, last access) pairs driven by a weight update rule."""

    def __init__(self, kind: str, half_life: float = DEFAULT_HALF_LIFE,
                 alpha: float = DEFAULT_ALPHA):
        if kind not in ("lrfu", "exd"):
            raise ValueError(kind)
        self.kind = kind
        self.half_life = half_life
        self.alpha = alpha
        self.state: dict[int, tuple[float, float]] = {}

    def create(self, file_id: int, now: float) -> None:
        self.state[file_id] = (1.0, now)

    def access(self, file_id: int, now: float) -> float:
        w, last = self.state.get(file_id, (1.0, now))
        if self.kind == "lrfu":
            w = lrfu_update(w, last, now, self.half_life)
        else:
            w = exd_update(w, last, now, self.alpha)
        self.state[file_id] = (w, now)
        return w

    def drop(self, file_id: int) -> None:
        self.state.pop(file_id, None)

    def weight(self, file_id: int) -> float:
        return self.state.get(file_id, (1.0, 0.0))[0]


def _lfu_key(m: FileMeta):
    return (m.total_access_count, m.file_id)


def select_downgrade_victim(kind: str, candidates: Sequence[FileMeta], now: float,
                            weights: WeightTable | None = None,
                            old_window: float = DEFAULT_OLD_WINDOW) -> int:
    """Pick the file to downgrade; ties go to the lowest file id."""
    if not candidates:
        raise EmptyCandidates("no files to choose from")
    if kind == "lru":
        return min(candidates, key=lambda m: (m.last_use, m.file_id)).file_id
    if kind == "lfu":
        return min(candidates, key=_lfu_key).file_id
    if kind in ("lrfu", "exd"):
        if weights is None:
            raise ValueError(f"{kind} needs a weight table")
        return min(candidates, key=lambda m: (weights.weight(m.file_id), m.file_id)).file_id
    if kind in ("life", "lfu-f"):
        old = [m for m in candidates if now - m.last_use >= old_window]
        if old:
            return min(old, key=_lfu_key).file_id
        if kind == "life":
            return min(candidates, key=lambda m: (-m.size, m.file_id)).file_id
        return min(candidates, key=_lfu_key).file_id
    raise ValueError(f"unknown downgrade policy {kind!r}")


def should_upgrade(kind: str, meta: FileMeta, *, in_memory: bool, weight: float = 1.0,
                   headroom: int = 0, eviction_weights: Sequence[float] = (),
                   lrfu_threshold: float = DEFAULT_LRFU_UPGRADE_THRESHOLD) -> bool:
    if in_memory:
        return False
    if kind == "osa":
        return True
    if kind == "lrfu":
        return weight > lrfu_threshold
    if kind == "exd":
        if meta.size <= headroom:
            return True
        return weight > sum(eviction_weights)
    raise ValueError(f"unknown upgrade policy {kind!r}")


@dataclass
class ClassicParams:
    half_life: float = DEFAULT_HALF_LIFE
    alpha: float = DEFAULT_ALPHA
    old_window: float = DEFAULT_OLD_WINDOW
    lrfu_upgrade_threshold: float = DEFAULT_LRFU_UPGRADE_THRESHOLD


class ClassicDowngrade(DowngradePolicy):
    KINDS = ("lru", "lfu", "lrfu", "life", "lfu-f", "exd")

    def __init__(self, kind: str, params: ClassicParams | None = None, thresholds=None):
        super().__init__(thresholds)
        if kind not in self.KINDS:
            raise ValueError(f"unknown downgrade policy {kind!r}")
        self.name = kind
        self.params = params or ClassicParams()
        self.weights = None
        if kind in ("lrfu", "exd"):
            self.weights = WeightTable(kind, self.params.half_life, self.params.alpha)

    def on_create(self, meta: FileMeta) -> None:
        if self.weights is not None:
            self.weights.create(meta.file_id, meta.created_at)

    def on_access(self, meta: FileMeta, t: float) -> None:
        if self.weights is not None:
            self.weights.access(meta.file_id, t)

    def on_delete(self, meta: FileMeta) -> None:
        if self.weights is not None:
            self.weights.drop(meta.file_id)

    def select_file_to_downgrade(self, tier: TierKind, candidates: Sequence[FileMeta]) -> int:
        return select_downgrade_victim(self.name, candidates, self.cluster.now,
                                       self.weights, self.params.old_window)


class ClassicUpgrade(UpgradePolicy):
    """Upgrades only the file that was just accessed, one move per invocation."""

    KINDS = ("osa", "lrfu", "exd")

    def __init__(self, kind: str, params: ClassicParams | None = None):
        super().__init__()
        if kind not in self.KINDS:
            raise ValueError(f"unknown upgrade policy {kind!r}")
        self.name = kind
        self.params = params or ClassicParams()
        self.weights = None
        if kind in ("lrfu", "exd"):
            self.weights = WeightTable(kind, self.params.half_life, self.params.alpha)
        self._pending: int | None = None

    def on_create(self, meta: FileMeta) -> None:
        if self.weights is not None:
            self.weights.create(meta.file_id, meta.created_at)

    def on_access(self, meta: FileMeta, t: float) -> None:
        if self.weights is not None:
            self.weights.access(meta.file_id, t)

    def on_delete(self, meta: FileMeta) -> None:
        if self.weights is not None:
            self.weights.drop(meta.file_id)

    def start_upgrade(self, tier: TierKind | None, accessed: int | None) -> bool:
        self._pending = None
        if accessed is None:
            return False
        meta = self.cluster.files[accessed]
        in_mem = self.cluster.has_tier(accessed, TierKind.MEMORY)
        weight = self.weights.weight(accessed) if self.weights is not None else 1.0
        headroom, evict_w = 0, []
        if self.name == "exd" and not in_mem:
            headroom = self.manager.upgrade_headroom(accessed)
            if meta.size > headroom:
                victims = self.manager.preview_evictions(accessed)
                if victims is None:
                    return False
                evict_w = [self.weights.weight(v) for v in victims]
        if should_upgrade(self.name, meta, in_memory=in_mem, weight=weight, headroom=headroom,
                          eviction_weights=evict_w,
                          lrfu_threshold=self.params.lrfu_upgrade_threshold):
            self._pending = accessed
            return True
        return False

    def select_file_to_upgrade(self, tier: TierKind | None) -> int | None:
        fid, self._pending = self._pending, None
        return fid

    def stop_upgrade(self, tier: TierKind | None) -> bool:
        return True
