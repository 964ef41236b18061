"""Gradient-boosted regression trees used as the black-box teacher.

Trees are exact least-squares CART: candidate thresholds are midpoints between
consecutive distinct values, categorical features split one category against
the rest. Split search and batch prediction run in numba kernels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from numba import njit

from .tabular import BINARY, REGRESSION, Dataset

SQUARED = "squared"
LOGISTIC = "logistic"
LOGIT_CLAMP = 10.0


class Predictor(Protocol):
    def predict_raw(self, X: np.ndarray) -> np.ndarray: ...


class FunctionPredictor:
    """Wrap a vectorised callable ``f(X) -> scores`` as a :class:`Predictor`."""

    def __init__(self, fn):
        self.fn = fn

    def predict_raw(self, X):
        return np.asarray(self.fn(np.asarray(X, dtype=float)), dtype=float)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-np.logaddexp(0.0, -z))


def clamped_logit(p: float) -> float:
    if p <= 0.0:
        return -LOGIT_CLAMP
    if p >= 1.0:
        return LOGIT_CLAMP
    return float(np.clip(np.log(p / (1.0 - p)), -LOGIT_CLAMP, LOGIT_CLAMP))


@njit(cache=True)
def _best_split(X, t, idx, is_cat, min_leaf):
    n = idx.size
    d = X.shape[1]
    mean = 0.0
    for k in range(n):
        mean += t[idx[k]]
    mean /= n
    r = np.empty(n)
    ss = 0.0
    for k in range(n):
        r[k] = t[idx[k]] - mean
        ss += r[k] * r[k]
    # sum of centred targets is ~0, so gain = sl^2/nl + sl^2/nr
    best_gain = 1e-10 * ss
    best_f = -1
    best_thr = 0.0
    x = np.empty(n)
    for f in range(d):
        for k in range(n):
            x[k] = X[idx[k], f]
        if is_cat[f]:
            cats = np.unique(x)
            for c in cats:
                sl = 0.0
                nl = 0
                for k in range(n):
                    if x[k] == c:
                        sl += r[k]
                        nl += 1
                nr = n - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                gain = sl * sl / nl + sl * sl / nr
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = c
        else:
            order = np.argsort(x, kind="mergesort")
            sl = 0.0
            for k in range(n - 1):
                sl += r[order[k]]
                nl = k + 1
                nr = n - nl
                a = x[order[k]]
                b = x[order[k + 1]]
                if a == b or nl < min_leaf or nr < min_leaf:
                    continue
                gain = sl * sl / nl + sl * sl / nr
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * (a + b)
                    if thr <= a:
                        thr = b
                    best_thr = thr
    return best_f, best_thr, best_gain


@njit(cache=True)
def _predict_flat(X, feature, threshold, categorical, left, right, value, roots, scale):
    n = X.shape[0]
    out = np.zeros(n)
    for k in range(n):
        s = 0.0
        for t in range(roots.size):
            node = roots[t]
            while feature[node] >= 0:
                v = X[k, feature[node]]
                if categorical[node]:
                    go_left = v == threshold[node]
                else:
                    go_left = v < threshold[node]
                node = left[node] if go_left else right[node]
            s += value[node]
        out[k] = scale * s
    return out


@dataclass
class RegressionTree:
    """Array-backed binary tree; ``feature == -1`` marks a leaf.

    Internal nodes send a row left when ``x[feature] < threshold`` (numerical)
    or ``x[feature] == threshold`` (categorical code).
    """

    feature: np.ndarray
    threshold: np.ndarray
    categorical: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _predict_flat(
            X, self.feature, self.threshold, self.categorical,
            self.left, self.right, self.value, np.zeros(1, dtype=np.int64), 1.0,
        )

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "categorical": self.categorical.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["categorical"], dtype=bool),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )


def fit_cart(X, targets, max_depth: int | None = 6, min_leaf: int = 1, categorical=None) -> RegressionTree:
    """Fit a least-squares regression tree.

    Each split maximises the SSE reduction; a node becomes a leaf (mean
    target) when no split leaves ``min_leaf`` rows on both sides or the
    targets are constant. ``max_depth=None`` grows without a depth limit.
    """
    X = np.ascontiguousarray(X, dtype=float)
    t = np.ascontiguousarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] != t.size:
        raise ValueError("X must be (N, d) with one target per row")
    if t.size == 0:
        raise ValueError("cannot fit a tree on zero rows")
    min_leaf = max(1, int(min_leaf))
    is_cat = np.zeros(X.shape[1], dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)

    feature, threshold, cat, left, right, value = [], [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        cat.append(False)
        left.append(-1)
        right.append(-1)
        value.append(float(t[idx].mean()))
        if (max_depth is not None and depth >= max_depth) or idx.size < 2 * min_leaf:
            return node
        f, thr, _ = _best_split(X, t, idx, is_cat, min_leaf)
        if f < 0:
            return node
        x = X[idx, f]
        go_left = x == thr if is_cat[f] else x < thr
        feature[node] = int(f)
        threshold[node] = float(thr)
        cat[node] = bool(is_cat[f])
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(t.size, dtype=np.int64), 0)
    return RegressionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(cat, dtype=bool),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
    )


@dataclass
class GbdtConfig:
    rounds: int = 300
    learning_rate: float = 0.1
    max_depth: int | None = 6
    min_leaf: int = 5
    objective: str | None = None  # inferred from the task when None


@dataclass
class GbdtModel:
    base_score: float
    learning_rate: float
    trees: list[RegressionTree]
    objective: str = SQUARED
    loss_trace: list[float] = field(default_factory=list, repr=False)
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    def _packed(self):
        if self._flat is None:
            offs, roots = 0, []
            parts = {k: [] for k in ("feature", "threshold", "categorical", "left", "right", "value")}
            for tree in self.trees:
                roots.append(offs)
                internal = tree.feature >= 0
                for k in parts:
                    arr = getattr(tree, k)
                    if k in ("left", "right"):
                        arr = np.where(internal, arr + offs, -1)
                    parts[k].append(arr)
                offs += tree.n_nodes
            if self.trees:
                flat = tuple(np.concatenate(parts[k]) for k in parts)
            else:
                flat = (np.zeros(0, np.int64), np.zeros(0), np.zeros(0, bool),
                        np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
            self._flat = flat + (np.asarray(roots, dtype=np.int64),)
        return self._flat

    def predict_raw(self, X) -> np.ndarray:
        """Raw scores (the logit for the logistic objective), one per row."""
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        f, thr, cat, lft, rgt, val, roots = self._packed()
        return self.base_score + _predict_flat(X, f, thr, cat, lft, rgt, val, roots, self.learning_rate)

    def predict(self, X) -> np.ndarray:
        raw = self.predict_raw(X)
        return sigmoid(raw) if self.objective == LOGISTIC else raw

    def to_dict(self) -> dict:
        return {
            "format": "calm-gbdt",
            "version": 1,
            "objective": self.objective,
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format") != "calm-gbdt" or d.get("version") != 1:
            raise ValueError(f"unsupported GBDT model format/version: {d.get('format')!r}/{d.get('version')!r}")
        return cls(d["base_score"], d["learning_rate"],
                   [RegressionTree.from_dict(t) for t in d["trees"]], d["objective"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GbdtModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _loss(objective, y, F):
    if objective == LOGISTIC:
        # mean log-loss written via logaddexp for stability
        return float(np.mean(np.logaddexp(0.0, F) - y * F))
    return float(np.mean((y - F) ** 2))


def gbdt_fit(ds: Dataset, config: GbdtConfig | None = None) -> GbdtModel:
    """Boost least-squares trees on the negative gradient of the loss."""
    config = config or GbdtConfig()
    objective = config.objective or (LOGISTIC if ds.task == BINARY else SQUARED)
    if objective == LOGISTIC and ds.task != BINARY:
        raise ValueError("logistic objective requires a binary task")
    if objective == SQUARED and ds.task != REGRESSION:
        raise ValueError("squared objective requires a regression task")
    if ds.n == 0:
        raise ValueError("empty dataset")
    y = ds.y
    base = clamped_logit(float(y.mean())) if objective == LOGISTIC else float(y.mean())
    F = np.full(ds.n, base)
    trees = []
    trace = [_loss(objective, y, F)]
    is_cat = ds.categorical_mask
    for _ in range(config.rounds):
        resid = y - sigmoid(F) if objective == LOGISTIC else y - F
        tree = fit_cart(ds.X, resid, config.max_depth, config.min_leaf, is_cat)
        F = F + config.learning_rate * tree.predict(ds.X)
        trees.append(tree)
        trace.append(_loss(objective, y, F))
    return GbdtModel(base, config.learning_rate, trees, objective, trace)


def predict_raw(model: Predictor, rows) -> np.ndarray:
    return model.predict_raw(np.asarray(rows, dtype=float))
