"""Offline studies of the access-prediction models and policy comparison runs.

Training points come from replaying a trace's creates and reads into file
metadata only (no cluster), sweeping a seeded sample of live files every few
minutes and emitting a positive point on every access, exactly like the
online learner inside a simulation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .features import FeatureConfig, TrainingPoint, on_access_positive_sample
from .gbt import (GbtConfig, GbtModel, PointStore, boost_incremental, evaluate, fit,
                  roc_auc)
from .gbt import SingleClass
from .replay import make_downgrade, make_upgrade, replay
from .simcore import ClusterConfig, FileMeta
from .workload import EventKind, TraceEvent
from .xgb import XgbPolicyConfig, sweep_points, sweep_sample

HOUR = 3600.0


@dataclass(frozen=True)
class StampedPoint:
    t: float  # generation time
    point: TrainingPoint


def point_stream(events: Sequence[TraceEvent], w: float, feature_cfg: FeatureConfig = FeatureConfig(),
                 sweep_interval: float = 300.0, sample: int = 500, seed: int = 0,
                 k: int = 12) -> list[StampedPoint]:
    """Training points a learner with class window ``w`` would see along the trace."""
    rng = np.random.default_rng(seed)
    metas: dict[int, FileMeta] = {}
    out: list[StampedPoint] = []
    next_sweep = sweep_interval

    def sweep(now: float) -> None:
        live = [metas[f] for f in sorted(metas)]
        for p in sweep_points(sweep_sample(live, rng, sample), now, w, feature_cfg):
            out.append(StampedPoint(now, p))

    for ev in events:
        while next_sweep <= ev.t:
            sweep(next_sweep)
            next_sweep += sweep_interval
        if ev.kind is EventKind.CREATE:
            metas[ev.file] = FileMeta(ev.file, ev.size, ev.t, k=k)
        elif ev.kind is EventKind.READ:
            m = metas[ev.file]
            m.record_access(ev.t)
            if ev.t - w >= m.created_at:
                out.append(StampedPoint(ev.t, on_access_positive_sample(m, ev.t, w, feature_cfg)))
        elif ev.kind is EventKind.DELETE:
            metas.pop(ev.file, None)
    end = events[-1].t if events else 0.0
    while next_sweep <= end:
        sweep(next_sweep)
        next_sweep += sweep_interval
    return out


def as_arrays(points: Sequence[StampedPoint]) -> tuple[np.ndarray, np.ndarray]:
    if not points:
        return np.zeros((0, 0)), np.zeros(0)
    X = np.asarray([p.point.features for p in points], dtype=float)
    y = np.asarray([p.point.label for p in points], dtype=float)
    return X, y


def split_hours(points: Sequence[StampedPoint], origin: float, edges: Sequence[float]
                ) -> list[list[StampedPoint]]:
    """Partition points by generation time into [origin+edges[i], origin+edges[i+1])."""
    parts: list[list[StampedPoint]] = [[] for _ in range(len(edges) - 1)]
    for p in points:
        h = (p.t - origin) / HOUR
        for i in range(len(edges) - 1):
            if edges[i] <= h < edges[i + 1]:
                parts[i].append(p)
                break
    return parts


@dataclass
class SplitScore:
    n: int
    positives: int
    accuracy: float | None
    auc: float | None
    roc: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "positives": self.positives, "accuracy": self.accuracy,
                "auc": self.auc}


def score(model: GbtModel, points: Sequence[StampedPoint], threshold: float = 0.5) -> SplitScore:
    if not points:
        return SplitScore(0, 0, None, None)
    X, y = as_arrays(points)
    probs = model.predict_proba(X)
    acc = evaluate(model, X, y, threshold).accuracy
    try:
        roc, auc = roc_auc(probs, y)
    except SingleClass:
        roc, auc = [], None
    return SplitScore(len(y), int(y.sum()), acc, auc, roc)


def train_incremental(points: Sequence[StampedPoint], cfg: GbtConfig = GbtConfig(),
                      boost_every: int = 500, store_capacity: int = 100_000,
                      width: int | None = None) -> GbtModel:
    """Feed points in generation order, boosting every ``boost_every`` of them."""
    width = width or len(points[0].point.features)
    model = GbtModel(width, cfg)
    store = PointStore(width, store_capacity)
    for i in range(0, len(points), boost_every):
        X, y = as_arrays(points[i:i + boost_every])
        model = boost_incremental(model, X, y, store, cfg)
    return model


@dataclass
class StudyResult:
    window: float
    train: SplitScore
    validation: SplitScore
    test: SplitScore
    trees: int
    seconds: float

    def to_dict(self) -> dict[str, Any]:
        return {"window": self.window, "train": self.train.to_dict(),
                "validation": self.validation.to_dict(), "test": self.test.to_dict(),
                "trees": self.trees, "seconds": round(self.seconds, 3)}


def holdout_study(events: Sequence[TraceEvent], w: float, *, origin: float | None = None,
                  feature_cfg: FeatureConfig = FeatureConfig(), gbt_cfg: GbtConfig = GbtConfig(),
                  threshold: float = 0.5, seed: int = 0) -> StudyResult:
    """Train on hours 0-4 after ``origin``, validate on hour 5, test on hour 6.

    ``origin`` defaults to ``w``: the first moment a full class window of
    history exists.
    """
    t0 = time.perf_counter()
    origin = w if origin is None else origin
    pts = point_stream(events, w, feature_cfg, seed=seed)
    train, val, test = split_hours(pts, origin, (0, 4, 5, 6))
    if not train:
        raise ValueError("no training points in the first four hours")
    model = train_incremental(train, gbt_cfg, width=feature_cfg.width)
    return StudyResult(w, score(model, train, threshold), score(model, val, threshold),
                       score(model, test, threshold), len(model.trees),
                       time.perf_counter() - t0)


@dataclass
class TimelineRow:
    hour: int
    incremental: float | None
    oneshot: float | None
    retrain: float | None
    n: int


def accuracy_timeline(events: Sequence[TraceEvent], w: float, *, origin: float | None = None,
                      oneshot_hours: float = 1.0, feature_cfg: FeatureConfig = FeatureConfig(),
                      gbt_cfg: GbtConfig = GbtConfig(), threshold: float = 0.5,
                      seed: int = 0, modes: Sequence[str] = ("incremental", "oneshot", "retrain")
                      ) -> list[TimelineRow]:
    """Hour-by-hour accuracy of three training regimes on the point stream.

    Each hour is scored by the model as it stood at the start of that hour.
    ``incremental`` keeps boosting on a cumulative store, ``oneshot`` is frozen
    after the first ``oneshot_hours`` and ``retrain`` is refit from scratch on
    everything seen so far at every hour boundary.
    """
    origin = w if origin is None else origin
    pts = point_stream(events, w, feature_cfg, seed=seed)
    if not pts:
        return []
    # only whole hours are scored; a trailing partial hour is dropped
    full_hours = int((pts[-1].t - origin) // HOUR)
    hours = split_hours(pts, origin, list(range(0, full_hours + 1)))
    width = feature_cfg.width
    inc = GbtModel(width, gbt_cfg)
    store = PointStore(width)
    oneshot: GbtModel | None = None
    retrain: GbtModel | None = None
    seen: list[StampedPoint] = []
    rows = []

    def acc(model: GbtModel | None, part) -> float | None:
        if model is None or not part:
            return None
        X, y = as_arrays(part)
        return evaluate(model, X, y, threshold).accuracy

    for h, part in enumerate(hours):
        if h > 0:
            rows.append(TimelineRow(h, acc(inc, part) if "incremental" in modes else None,
                                    acc(oneshot, part) if "oneshot" in modes else None,
                                    acc(retrain, part) if "retrain" in modes else None, len(part)))
        # learn from this hour before moving to the next
        if "incremental" in modes:
            for i in range(0, len(part), 500):
                X, y = as_arrays(part[i:i + 500])
                inc = boost_incremental(inc, X, y, store, gbt_cfg)
        seen.extend(part)
        if "oneshot" in modes and oneshot is None and h + 1 >= oneshot_hours and seen:
            X, y = as_arrays(seen)
            oneshot = fit(X, y, gbt_cfg)
        if "retrain" in modes and seen:
            X, y = as_arrays(seen[-100_000:])
            retrain = fit(X, y, gbt_cfg)
    return rows


def ablation_configs(k_values: Sequence[int] = (6, 12, 18)) -> dict[str, FeatureConfig]:
    out = {f"k={k}": FeatureConfig(k=k) for k in k_values}
    out["no-size"] = FeatureConfig(use_size=False)
    out["no-creation"] = FeatureConfig(use_creation=False)
    return out


def compare_policies(events: Sequence[TraceEvent], policies: Sequence[tuple[str, str]],
                     config: ClusterConfig | None = None, *, seed: int = 0,
                     measure_from: float = 0.0, xgb_cfg: XgbPolicyConfig | None = None,
                     progress: Callable[[str], None] | None = None) -> dict[str, Any]:
    """Run every (downgrade, upgrade) pair on the same trace; keyed by ``down+up``."""
    results = {}
    for down, up in policies:
        key = f"{down}+{up}"
        if progress:
            progress(key)
        results[key] = replay(events, config, make_downgrade(down, seed=seed, xgb_cfg=xgb_cfg),
                              make_upgrade(up, seed=seed, xgb_cfg=xgb_cfg),
                              measure_from=measure_from)
    return results
