"""Gradient-boosted regression trees for binary classification.

Second-order boosting on the logistic loss with L2-regularised leaves and
exact greedy split search.  Rows whose feature equals the missing sentinel
follow a per-split default direction, chosen during training to maximise
gain.

For a node with gradient sum G and hessian sum H the optimal leaf weight is
``-G / (H + lambda)`` and a split scores::

    gain = 0.5 * (G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda))
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

FORMAT_VERSION = 1


class GbtError(ValueError):
    pass


class EmptyDataset(GbtError):
    pass


class WidthMismatch(GbtError):
    pass


class SingleClass(GbtError):
    pass


@dataclass(frozen=True)
class GbtConfig:
    max_depth: int = 20
    rounds_per_fit: int = 10
    learning_rate: float = 0.3
    min_samples_leaf: int = 2
    lambda_l2: float = 1.0
    base_score: float = 0.5
    min_child_weight: float = 1.0
    min_split_gain: float = 0.0
    missing: float = -1.0

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.rounds_per_fit < 1:
            raise ValueError("max_depth and rounds_per_fit must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.base_score < 1:
            raise ValueError("base_score must lie in (0, 1)")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def logloss(y, margin) -> float:
    """Mean logistic loss of labels ``y`` under raw margins."""
    y = np.asarray(y, dtype=float)
    m = np.asarray(margin, dtype=float)
    # log(1 + exp(-m)) for y=1, log(1 + exp(m)) for y=0
    return float(np.mean(np.logaddexp(0.0, np.where(y > 0.5, -m, m))))


def logistic_grad_hess(y, margin) -> tuple[np.ndarray, np.ndarray]:
    p = sigmoid(margin)
    return p - np.asarray(y, dtype=float), p * (1.0 - p)


@dataclass
class Tree:
    """Flat array representation; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            i, d = stack.pop()
            if self.feature[i] < 0:
                best = max(best, d)
            else:
                stack.append((self.left[i], d + 1))
                stack.append((self.right[i], d + 1))
        return best

    def predict(self, X: np.ndarray, missing: float) -> np.ndarray:
        cur = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[cur]
            inner = f >= 0
            if not inner.any():
                return self.value[cur]
            x = X[rows, np.where(inner, f, 0)]
            go_left = np.where(x == missing, self.default_left[cur], x < self.threshold[cur])
            nxt = np.where(go_left, self.left[cur], self.right[cur])
            cur = np.where(inner, nxt, cur)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "default_left": self.default_left.astype(int).tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64),
                   np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["default_left"], dtype=bool),
                   np.asarray(d["value"], dtype=float))


def presort(X: np.ndarray) -> np.ndarray:
    """Row order of every column, ascending (missing sentinel first)."""
    return np.argsort(X, axis=0, kind="stable")


class _TreeBuilder:
    # numerical slack so exactly-balanced splits (gain 0, e.g. XOR) are not lost to rounding
    GAIN_TOL = 1e-12

    def __init__(self, X: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: GbtConfig,
                 root_order: np.ndarray | None = None):
        self.X, self.g, self.h, self.cfg = X, g, h, cfg
        self.root_order = root_order
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.default_left: list[bool] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.default_left.append(True)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self) -> Tree:
        n, F = self.X.shape
        go_left = np.zeros(n, dtype=bool)
        # per-column row order, sorted once and partitioned stably down the tree
        root_order = self.root_order
        if root_order is None:
            root_order = presort(self.X)
        stack = [(root_order, 0, self._new_node())]
        while stack:
            order, depth, node = stack.pop()
            idx = order[:, 0]
            G, H = self.g[idx].sum(), self.h[idx].sum()
            split = None
            if depth < self.cfg.max_depth and len(idx) >= 2 * self.cfg.min_samples_leaf:
                split = self._best_split(order, G, H)
            if split is None:
                self.value[node] = -G / (H + self.cfg.lambda_l2) * self.cfg.learning_rate
                continue
            feat, thr, dleft = split
            x = self.X[idx, feat]
            go_left[idx] = np.where(x == self.cfg.missing, dleft, x < thr)
            n_left = int(go_left[idx].sum())
            mask = go_left[order].T
            left_order = order.T[mask].reshape(F, n_left).T
            right_order = order.T[~mask].reshape(F, len(idx) - n_left).T
            l_node, r_node = self._new_node(), self._new_node()
            self.feature[node], self.threshold[node] = feat, thr
            self.default_left[node] = dleft
            self.left[node], self.right[node] = l_node, r_node
            stack.append((right_order, depth + 1, r_node))
            stack.append((left_order, depth + 1, l_node))
        return Tree(np.asarray(self.feature, dtype=np.int64),
                    np.asarray(self.threshold, dtype=float),
                    np.asarray(self.left, dtype=np.int64),
                    np.asarray(self.right, dtype=np.int64),
                    np.asarray(self.default_left, dtype=bool),
                    np.asarray(self.value, dtype=float))

    def _best_split(self, order: np.ndarray, G: float, H: float):
        cfg = self.cfg
        gain, feat, thr, dleft = _split_kernel(
            self.X, self.g, self.h, order, cfg.missing, G, H, cfg.lambda_l2,
            cfg.min_samples_leaf, cfg.min_child_weight)
        if feat < 0 or 0.5 * gain < cfg.min_split_gain - self.GAIN_TOL:
            return None
        return int(feat), float(thr), bool(dleft)


@numba.njit(cache=True)
def _split_kernel(X, g, h, order, missing, G, H, lam, msl, mcw):
    """Exact greedy scan over every column; returns (gain, feature, threshold, default_left).

    ``gain`` excludes the 0.5 factor.  The sentinel is below every real value,
    so in each sorted column the missing rows come first.
    """
    n, F = order.shape
    parent = G * G / (H + lam)
    best_gain = -np.inf
    best_f, best_thr, best_dleft = -1, 0.0, True
    for f in range(F):
        m = 0
        Gm = 0.0
        Hm = 0.0
        while m < n and X[order[m, f], f] == missing:
            Gm += g[order[m, f]]
            Hm += h[order[m, f]]
            m += 1
        GL = Gm
        HL = Hm
        for i in range(m, n - 1):
            r = order[i, f]
            GL += g[r]
            HL += h[r]
            x0 = X[r, f]
            x1 = X[order[i + 1, f], f]
            if not x0 < x1:
                continue
            thr = 0.5 * (x0 + x1)
            # missing rows go left with the prefix
            nL = i + 1
            if nL >= msl and n - nL >= msl and HL >= mcw and H - HL >= mcw:
                gain = GL * GL / (HL + lam) + (G - GL) ** 2 / (H - HL + lam) - parent
                if gain > best_gain:
                    best_gain, best_f, best_thr = gain, f, thr
                    best_dleft = True if m > 0 else nL >= n - nL
            if m > 0:
                gl = GL - Gm
                hl = HL - Hm
                nl = nL - m
                if nl >= msl and n - nl >= msl and hl >= mcw and H - hl >= mcw:
                    gain = gl * gl / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - parent
                    if gain > best_gain:
                        best_gain, best_f, best_thr, best_dleft = gain, f, thr, False
        # split isolating the missing rows (all real values right)
        if 0 < m < n:
            nL = m
            if nL >= msl and n - nL >= msl and Hm >= mcw and H - Hm >= mcw:
                gain = Gm * Gm / (Hm + lam) + (G - Gm) ** 2 / (H - Hm + lam) - parent
                if gain > best_gain:
                    best_gain, best_f, best_dleft = gain, f, True
                    best_thr = 0.5 * (missing + X[order[m, f], f])
    return best_gain, best_f, best_thr, best_dleft


@dataclass
class GbtModel:
    n_features: int
    config: GbtConfig = field(default_factory=GbtConfig)
    trees: tuple[Tree, ...] = ()
    base_margin: float | None = None

    def __post_init__(self) -> None:
        if self.base_margin is None:
            p = self.config.base_score
            self.base_margin = float(np.log(p / (1 - p)))
        self._flat = None

    def with_trees(self, extra: Sequence[Tree]) -> "GbtModel":
        return GbtModel(self.n_features, self.config, self.trees + tuple(extra), self.base_margin)

    def _check(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise WidthMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def _flatten(self):
        if self._flat is None:
            offs = np.cumsum([0] + [t.n_nodes for t in self.trees])
            cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])
            left = np.concatenate([t.left + o for t, o in zip(self.trees, offs)])
            right = np.concatenate([t.right + o for t, o in zip(self.trees, offs)])
            self._flat = (offs[:-1], cat("feature"), cat("threshold"), left, right,
                          cat("default_left"), cat("value"))
        return self._flat

    def margin(self, X) -> np.ndarray:
        X = self._check(X)
        out = np.full(len(X), self.base_margin)
        if not self.trees or len(X) == 0:
            return out
        roots, feat, thr, left, right, dleft, value = self._flatten()
        rows = np.arange(len(X))[:, None]
        cur = np.broadcast_to(roots, (len(X), len(roots))).copy()
        miss = self.config.missing
        while True:
            f = feat[cur]
            inner = f >= 0
            if not inner.any():
                break
            x = X[rows, np.where(inner, f, 0)]
            go_left = np.where(x == miss, dleft[cur], x < thr[cur])
            cur = np.where(inner, np.where(go_left, left[cur], right[cur]), cur)
        return out + value[cur].sum(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.margin(X))

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "n_features": self.n_features,
                "config": asdict(self.config), "base_margin": self.base_margin,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise GbtError(f"unsupported model format {d.get('format_version')}")
        return cls(int(d["n_features"]), GbtConfig(**d["config"]),
                   tuple(Tree.from_dict(t) for t in d["trees"]), float(d["base_margin"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "GbtModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_dataset(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDataset("dataset has no rows")
    if len(y) != len(X):
        raise WidthMismatch("label count differs from row count")
    if not np.isin(y, (0.0, 1.0)).all():
        raise GbtError("labels must be 0 or 1")
    return X, y


def boost_rounds(X: np.ndarray, y: np.ndarray, margin: np.ndarray, cfg: GbtConfig,
                 rounds: int, loss_trace: list | None = None) -> tuple[list[Tree], np.ndarray]:
    """Grow ``rounds`` trees starting from ``margin``; returns trees and updated margin."""
    trees = []
    margin = margin.copy()
    order = presort(X)
    for _ in range(rounds):
        g, h = logistic_grad_hess(y, margin)
        tree = _TreeBuilder(X, g, h, cfg, order).build()
        margin += tree.predict(X, cfg.missing)
        trees.append(tree)
        if loss_trace is not None:
            loss_trace.append(logloss(y, margin))
    return trees, margin


def fit(X, y, cfg: GbtConfig = GbtConfig(), loss_trace: list | None = None) -> GbtModel:
    X, y = _as_dataset(X, y)
    model = GbtModel(X.shape[1], cfg)
    margin = np.full(len(X), model.base_margin)
    if loss_trace is not None:
        loss_trace.append(logloss(y, margin))
    trees, _ = boost_rounds(X, y, margin, cfg, cfg.rounds_per_fit, loss_trace)
    return model.with_trees(trees)


class PointStore:
    """Bounded FIFO of training rows plus their margins under the current model."""

    def __init__(self, width: int, capacity: int = 100_000):
        self.width = width
        self.capacity = capacity
        self._X: deque = deque()
        self._y: deque = deque()
        self._m: deque = deque()

    def __len__(self) -> int:
        return len(self._y)

    def extend(self, X: np.ndarray, y: np.ndarray, margins: np.ndarray) -> None:
        if X.shape[1] != self.width:
            raise WidthMismatch(f"expected {self.width} features, got {X.shape[1]}")
        for row, lab, m in zip(X, y, margins):
            if len(self._y) >= self.capacity:
                self._X.popleft()
                self._y.popleft()
                self._m.popleft()
            self._X.append(row)
            self._y.append(lab)
            self._m.append(m)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._y:
            return np.empty((0, self.width)), np.empty(0), np.empty(0)
        return np.vstack(self._X), np.asarray(self._y, dtype=float), np.asarray(self._m, dtype=float)

    def set_margins(self, margins: np.ndarray) -> None:
        self._m = deque(margins.tolist())


def boost_incremental(model: GbtModel, X_new, y_new, store: PointStore,
                      cfg: GbtConfig | None = None, rounds: int | None = None) -> GbtModel:
    """Add points to the cumulative store and grow extra trees against all of it.

    Existing trees are shared, never modified.  With no new points the model
    is returned unchanged.
    """
    cfg = cfg or model.config
    X_new = np.asarray(X_new, dtype=float)
    if len(X_new) == 0:
        return model
    X_new = X_new.reshape(len(X_new), -1)
    if X_new.shape[1] != model.n_features:
        raise WidthMismatch(f"expected {model.n_features} features, got {X_new.shape[1]}")
    if len(X_new) == 0:
        return model
    y_new = np.asarray(y_new, dtype=float)
    store.extend(X_new, y_new, model.margin(X_new))
    X, y, margin = store.arrays()
    trees, margin = boost_rounds(X, y, margin, cfg, rounds or cfg.rounds_per_fit)
    store.set_margins(margin)
    return model.with_trees(trees)


@dataclass
class Evaluation:
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def evaluate(model: GbtModel, X, y, threshold: float = 0.5) -> Evaluation:
    X, y = _as_dataset(X, y)
    return confusion(model.predict_proba(X), y, threshold)


def confusion(scores, y, threshold: float = 0.5) -> Evaluation:
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y) > 0.5
    if len(y) == 0:
        raise EmptyDataset("no rows to evaluate")
    pred = scores > threshold
    tp = int(np.sum(pred & y))
    tn = int(np.sum(~pred & ~y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    return Evaluation((tp + tn) / len(y), tp, fp, tn, fn)


def roc_auc(scores, labels) -> tuple[list[tuple[float, float]], float]:
    """ROC points from a sweep over distinct scores and the trapezoidal AUC.

    Tied scores enter the curve together, so the area credits ties with one half.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels) > 0.5
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tpr = np.r_[0.0, np.cumsum(y)[last] / pos]
    fpr = np.r_[0.0, np.cumsum(~y)[last] / neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return list(zip(fpr.tolist(), tpr.tolist())), auc
