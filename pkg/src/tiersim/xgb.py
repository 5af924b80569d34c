"""Learned downgrade and upgrade policies.

Each policy owns an :class:`OnlineLearner`: a boosted-tree model that
predicts whether a file will be accessed within a class window.  The
downgrade model looks far ahead (hours), the upgrade model looks a short
way ahead (minutes).  Until a learner passes its holdout gate the policies
fall back to LRU (downgrade) and on-access upgrades (upgrade).
"""
from __future__ import annotations

import heapq
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .features import FeatureConfig, TrainingPoint, build_features, sample_training_point
from .gbt import GbtConfig, GbtModel, PointStore, boost_incremental
from .policyapi import DowngradePolicy, PolicyThresholds, UpgradePolicy
from .simcore import GB, FileMeta, TierKind

HOUR = 3600.0


class NotWarm(RuntimeError):
    pass


@dataclass(frozen=True)
class XgbPolicyConfig:
    scan_k: int = 200
    discrimination_threshold: float = 0.5
    warmup_error_threshold: float = 0.01
    upgrade_batch_cap: int = GB
    downgrade_window: float = 6 * HOUR
    upgrade_window: float = 0.5 * HOUR
    holdout_every: int = 10
    holdout_window: int = 200
    boost_every: int = 500
    store_capacity: int = 100_000
    sweep_interval: float = 300.0
    sweep_sample: int = 500

    def __post_init__(self) -> None:
        if self.scan_k < 1:
            raise ValueError("scan_k must be >= 1")
        if not 0 < self.discrimination_threshold < 1:
            raise ValueError("discrimination_threshold must lie in (0, 1)")


def warmup_check(errors: Sequence[int], window: int = 200, threshold: float = 0.01) -> bool:
    """True once the last ``window`` holdout errors average below ``threshold``."""
    if len(errors) < window:
        return False
    recent = list(errors)[-window:]
    return sum(recent) / window < threshold


def sweep_sample(metas: Sequence[FileMeta], rng: np.random.Generator, n: int) -> list[FileMeta]:
    if len(metas) <= n:
        return list(metas)
    idx = np.sort(rng.choice(len(metas), size=n, replace=False))
    return [metas[i] for i in idx]


def sweep_points(metas: Iterable[FileMeta], now: float, w: float,
                 cfg: FeatureConfig) -> list[TrainingPoint]:
    return [sample_training_point(m, now, w, cfg) for m in metas if now - w >= m.created_at]


class OnlineLearner:
    """Training-point stream, holdout gate and an incrementally boosted model."""

    def __init__(self, window: float, cfg: XgbPolicyConfig = XgbPolicyConfig(),
                 feature_cfg: FeatureConfig = FeatureConfig(),
                 gbt_cfg: GbtConfig = GbtConfig(), seed: int = 0):
        self.window = window
        self.cfg = cfg
        self.feature_cfg = feature_cfg
        self.gbt_cfg = gbt_cfg
        self.rng = np.random.default_rng(seed)
        self.model = GbtModel(feature_cfg.width, gbt_cfg)
        self.store = PointStore(feature_cfg.width, cfg.store_capacity)
        self._pending_x: list[tuple[float, ...]] = []
        self._pending_y: list[int] = []
        self.generated = 0
        self.holdout: deque[int] = deque(maxlen=cfg.holdout_window)
        self.version = 0
        self.warm_since: float | None = None
        self.timeline: list[dict] = []
        self.train_seconds = 0.0
        self.boosts = 0
        self.next_sweep = 0.0

    @property
    def warm(self) -> bool:
        return warmup_check(self.holdout, self.cfg.holdout_window, self.cfg.warmup_error_threshold)

    def add_point(self, point: TrainingPoint, now: float) -> None:
        self.generated += 1
        if self.generated % self.cfg.holdout_every == 0:
            p = float(self.model.predict_proba(np.asarray([point.features]))[0])
            predicted = int(p > self.cfg.discrimination_threshold)
            self.holdout.append(int(predicted != point.label))
        self._pending_x.append(point.features)
        self._pending_y.append(point.label)
        if len(self._pending_y) >= self.cfg.boost_every:
            self.flush(now)

    def flush(self, now: float) -> None:
        if not self._pending_y:
            return
        X = np.asarray(self._pending_x, dtype=float)
        y = np.asarray(self._pending_y, dtype=float)
        self._pending_x, self._pending_y = [], []
        t0 = time.perf_counter()
        self.model = boost_incremental(self.model, X, y, self.store, self.gbt_cfg)
        self.train_seconds += time.perf_counter() - t0
        self.boosts += 1
        self.version += 1
        err = sum(self.holdout) / len(self.holdout) if self.holdout else None
        warm = self.warm
        if warm and self.warm_since is None:
            self.warm_since = now
        self.timeline.append({"t": now, "points": self.generated, "trees": len(self.model.trees),
                              "holdout_n": len(self.holdout), "holdout_error": err, "warm": warm})

    def on_access(self, meta: FileMeta, now: float) -> None:
        if now - self.window >= meta.created_at:
            self.add_point(sample_training_point(meta, now, self.window, self.feature_cfg), now)

    def sweep(self, metas: Sequence[FileMeta], now: float) -> None:
        chosen = sweep_sample(metas, self.rng, self.cfg.sweep_sample)
        for p in sweep_points(chosen, now, self.window, self.feature_cfg):
            self.add_point(p, now)

    def maybe_sweep(self, metas_fn: Callable[[], Sequence[FileMeta]], now: float) -> None:
        while now >= self.next_sweep:
            if self.next_sweep > 0:
                self.sweep(metas_fn(), now)
            self.next_sweep += self.cfg.sweep_interval

    def predict(self, metas: Sequence[FileMeta], now: float) -> np.ndarray:
        if not metas:
            return np.zeros(0)
        X = np.stack([build_features(m, now, self.feature_cfg) for m in metas])
        return self.model.predict_proba(X)

    def diagnostics(self) -> dict:
        return {"window": self.window, "warm_since": self.warm_since,
                "points": self.generated, "trees": len(self.model.trees),
                "boosts": self.boosts, "train_seconds": round(self.train_seconds, 3),
                "timeline": self.timeline}


ScoreFn = Callable[[Sequence[FileMeta]], np.ndarray]


def xgb_select_downgrade(candidates: Sequence[FileMeta], score: ScoreFn, scan_k: int = 200) -> int:
    """Lowest-probability file among the ``scan_k`` least recently used candidates."""
    if not candidates:
        raise ValueError("no files to choose from")
    lru = heapq.nsmallest(scan_k, candidates, key=lambda m: (m.last_use, m.file_id))
    probs = score(lru)
    best = min(range(len(lru)), key=lambda i: (probs[i], lru[i].file_id))
    return lru[best].file_id


def xgb_should_upgrade(probability: float, threshold: float = 0.5) -> bool:
    return probability > threshold


def xgb_upgrade_loop(mru_candidates: Sequence[FileMeta], probs: Sequence[float],
                     threshold: float = 0.5, cap: int = GB) -> list[int]:
    """Files to upgrade, most likely first, while the batch stays under ``cap``.

    A file is scheduled while the bytes scheduled before it are below the cap,
    so the batch can overshoot by at most one file.
    """
    order = sorted(range(len(mru_candidates)), key=lambda i: (-probs[i], mru_candidates[i].file_id))
    out, total = [], 0
    for i in order:
        if not xgb_should_upgrade(probs[i], threshold) or total >= cap:
            break
        out.append(mru_candidates[i].file_id)
        total += mru_candidates[i].size
    return out


class _ScoreCache:
    def __init__(self, learner: OnlineLearner):
        self.learner = learner
        self.key = None
        self.cache: dict[int, float] = {}

    def __call__(self, metas: Sequence[FileMeta], now: float) -> np.ndarray:
        key = (now, self.learner.version)
        if key != self.key:
            self.key, self.cache = key, {}
        todo = [m for m in metas if m.file_id not in self.cache]
        if todo:
            for m, p in zip(todo, self.learner.predict(todo, now)):
                self.cache[m.file_id] = float(p)
        return np.array([self.cache[m.file_id] for m in metas])


@dataclass
class DecisionLog:
    limit: int = 50_000
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        if len(self.rows) < self.limit:
            self.rows.append(row)


class XgbDowngrade(DowngradePolicy):
    name = "xgb"

    def __init__(self, cfg: XgbPolicyConfig = XgbPolicyConfig(),
                 feature_cfg: FeatureConfig = FeatureConfig(), gbt_cfg: GbtConfig = GbtConfig(),
                 seed: int = 0, thresholds: PolicyThresholds | None = None):
        super().__init__(thresholds)
        self.cfg = cfg
        self.learner = OnlineLearner(cfg.downgrade_window, cfg, feature_cfg, gbt_cfg, seed)
        self.scores = _ScoreCache(self.learner)
        self.decisions = DecisionLog()
        self.fallbacks = 0

    def on_access(self, meta: FileMeta, t: float) -> None:
        self.learner.on_access(meta, t)

    def on_tick(self, now: float) -> None:
        self.learner.maybe_sweep(lambda: [self.cluster.files[f] for f in sorted(self.cluster.files)], now)

    def select_file_to_downgrade(self, tier: TierKind, candidates: Sequence[FileMeta]) -> int:
        now = self.cluster.now
        if not self.learner.warm:
            self.fallbacks += 1
            return min(candidates, key=lambda m: (m.last_use, m.file_id)).file_id
        fid = xgb_select_downgrade(candidates, lambda ms: self.scores(ms, now), self.cfg.scan_k)
        self.decisions.add(t=now, op="downgrade", tier=tier.label, file=fid,
                           p=self.scores.cache.get(fid))
        return fid

    def diagnostics(self) -> dict:
        return {"policy": "xgb-downgrade", "config": asdict(self.cfg),
                "lru_fallbacks": self.fallbacks, **self.learner.diagnostics()}


class XgbUpgrade(UpgradePolicy):
    name = "xgb"

    def __init__(self, cfg: XgbPolicyConfig = XgbPolicyConfig(),
                 feature_cfg: FeatureConfig = FeatureConfig(), gbt_cfg: GbtConfig = GbtConfig(),
                 seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.learner = OnlineLearner(cfg.upgrade_window, cfg, feature_cfg, gbt_cfg, seed + 1)
        self.scores = _ScoreCache(self.learner)
        self.decisions = DecisionLog()
        self.fallbacks = 0
        self._queue: deque[int] = deque()

    def on_access(self, meta: FileMeta, t: float) -> None:
        self.learner.on_access(meta, t)

    def on_tick(self, now: float) -> None:
        self.learner.maybe_sweep(lambda: [self.cluster.files[f] for f in sorted(self.cluster.files)], now)

    def _mru_outside_memory(self) -> list[FileMeta]:
        out = []
        c = self.cluster
        for fid in c.mru_order():
            if not c.has_tier(fid, TierKind.MEMORY):
                out.append(c.files[fid])
                if len(out) >= self.cfg.scan_k:
                    break
        return out

    def start_upgrade(self, tier: TierKind | None, accessed: int | None) -> bool:
        self._queue.clear()
        c = self.cluster
        if not self.learner.warm:
            if accessed is not None and not c.has_tier(accessed, TierKind.MEMORY):
                self.fallbacks += 1
                self._queue.append(accessed)
            return bool(self._queue)
        now = c.now
        cands = self._mru_outside_memory()
        probs = self.scores(cands, now)
        chosen = xgb_upgrade_loop(cands, probs, self.cfg.discrimination_threshold,
                                  self.cfg.upgrade_batch_cap)
        for fid in chosen:
            self.decisions.add(t=now, op="upgrade", file=fid, p=self.scores.cache.get(fid))
        self._queue.extend(chosen)
        return bool(self._queue)

    def select_file_to_upgrade(self, tier: TierKind | None) -> int | None:
        return self._queue.popleft() if self._queue else None

    def stop_upgrade(self, tier: TierKind | None) -> bool:
        return not self._queue

    def diagnostics(self) -> dict:
        return {"policy": "xgb-upgrade", "config": asdict(self.cfg),
                "osa_fallbacks": self.fallbacks, **self.learner.diagnostics()}
