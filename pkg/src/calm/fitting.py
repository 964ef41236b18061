"""Region-gated shape functions and the two ways of fitting them.

``fit_calm_boost`` runs round-robin boosting where each update of
``f_i^(r)`` sees only the rows lying in region ``r`` of feature ``i``.
``fit_calm_exact_backfit`` replaces every boosting step by the exact
least-squares block minimiser (per-bin mean of the partial residual), which
makes the training MSE non-increasing at every block update.

Each shape is stored as a region level (``offset``) plus a piecewise-constant
curve with zero mean over the region's training rows. Feature-wise means of
the levels live in the intercept, so re-centring never changes a fitted value.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gbdt import clamped_logit, sigmoid
from .partition import PartitionSet
from .tabular import BINARY, REGRESSION, Dataset

BOOST = "boost"
EXACT = "exact_backfit"


@dataclass
class ShapeFunction:
    """Piecewise-constant univariate function of feature ``feature`` in
    region ``region``.

    Numerical: ``edges`` are breakpoints ``b0 < ... < bB`` and bin ``k`` covers
    ``[b_k, b_{k+1})``; values left of ``b0`` or right of ``bB`` clamp to the
    outer bins. Categorical: ``edges`` lists the category codes seen in the
    region, one bin each; other codes evaluate to the level alone.
    """

    feature: int
    region: int
    edges: np.ndarray
    values: np.ndarray
    offset: float = 0.0
    categorical: bool = False

    @property
    def n_bins(self) -> int:
        return self.values.size

    def bin_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.categorical:
            pos = np.searchsorted(self.edges, x)
            pos = np.minimum(pos, self.edges.size - 1)
            return np.where(self.edges[pos] == x, pos, -1)
        return np.searchsorted(self.edges[1:-1], x, side="right")

    def curve(self, x) -> np.ndarray:
        """Curve part only (without the region level)."""
        idx = self.bin_index(x)
        if self.categorical:
            return np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        return self.values[idx]

    def __call__(self, x) -> np.ndarray:
        return self.offset + self.curve(x)

    def full_values(self) -> np.ndarray:
        return self.offset + self.values

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "region": self.region,
            "categorical": self.categorical,
            "edges": [float(v) for v in self.edges],
            "values": [float(v) for v in self.values],
            "offset": float(self.offset),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeFunction":
        return cls(d["feature"], d["region"], np.asarray(d["edges"], dtype=float),
                   np.asarray(d["values"], dtype=float), float(d["offset"]), bool(d["categorical"]))


@dataclass
class ShapeSet:
    beta0: float
    shapes: list[list[ShapeFunction]]  # shapes[i][r - 1]

    def shape(self, i: int, region: int) -> ShapeFunction:
        return self.shapes[i][region - 1]

    def contributions(self, X, regions) -> np.ndarray:
        """N x d matrix of ``f_i^(r_i)(x_i)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape)
        for i, per_region in enumerate(self.shapes):
            for sf in per_region:
                rows = regions[:, i] == sf.region
                if rows.any():
                    out[rows, i] = sf(X[rows, i])
        return out

    def score(self, X, regions) -> np.ndarray:
        c = self.contributions(X, regions)
        # left-to-right sum so it matches beta0 + sum of contributions exactly
        s = np.full(c.shape[0], self.beta0)
        for i in range(c.shape[1]):
            s = s + c[:, i]
        return s

    def map_edges(self, fn) -> None:
        for per_region in self.shapes:
            for sf in per_region:
                if not sf.categorical:
                    sf.edges = np.asarray(fn(sf.feature, sf.edges), dtype=float)

    def to_dict(self) -> dict:
        return {"beta0": float(self.beta0), "shapes": [[s.to_dict() for s in per] for per in self.shapes]}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSet":
        return cls(float(d["beta0"]), [[ShapeFunction.from_dict(s) for s in per] for per in d["shapes"]])


@dataclass
class FitConfig:
    rounds: int = 500
    learning_rate: float = 0.1
    bins: int = 64
    mode: str = BOOST
    sweeps: int = 20
    tolerance: float = 1e-8
    learner_depth: int = 2
    leaf_min: int = 2

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.bins < 2:
            raise ValueError("bins must be at least 2")
        if self.mode not in (BOOST, EXACT):
            raise ValueError(f"unknown fit mode {self.mode!r}")


@dataclass
class FitResult:
    shapes: ShapeSet
    loss_trace: list[float] = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False


def bin_edges(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Breakpoints for a region's sample of one numerical feature.

    With at most ``max_bins`` distinct values every value gets its own bin
    (cuts at midpoints); otherwise cuts sit at equally spaced quantiles.
    """
    u = np.unique(x)
    if u.size == 0:
        return np.array([0.0, 1.0])
    if u.size == 1:
        return np.array([u[0], u[0] + 1.0])
    if u.size <= max_bins:
        cuts = 0.5 * (u[:-1] + u[1:])
    else:
        cuts = np.unique(np.quantile(x, np.arange(1, max_bins) / max_bins))
        cuts = cuts[(cuts > u[0]) & (cuts <= u[-1])]
    return np.concatenate([[u[0]], cuts, [u[-1]]])


@dataclass
class _Block:
    shape: ShapeFunction
    rows: np.ndarray
    bins: np.ndarray
    counts: np.ndarray


def _init_shapes(ds: Dataset, regions: np.ndarray, partitions: PartitionSet, config: FitConfig, beta0: float):
    shapes, blocks = [], []
    for i, tree in enumerate(partitions.trees):
        per = []
        cat = ds.schema[i].is_categorical
        for r in range(1, tree.n_regions + 1):
            rows = np.flatnonzero(regions[:, i] == r)
            x = ds.X[rows, i]
            if cat:
                edges = np.unique(x) if rows.size else np.unique(ds.X[:, i])
            else:
                edges = bin_edges(x if rows.size >= 2 else ds.X[:, i], config.bins)
            sf = ShapeFunction(i, r, edges, np.zeros(edges.size if cat else edges.size - 1), 0.0, cat)
            per.append(sf)
            if rows.size < 2:
                warnings.warn(f"region {r} of feature {i} has {rows.size} training rows; its shape stays 0")
                continue
            b = sf.bin_index(x)
            blocks.append(_Block(sf, rows, b, np.bincount(b, minlength=sf.n_bins).astype(float)))
        shapes.append(per)
    return ShapeSet(beta0, shapes), blocks


def _blocks_for(ds: Dataset, shapes: ShapeSet, regions: np.ndarray) -> list[_Block]:
    blocks = []
    for i, per in enumerate(shapes.shapes):
        for sf in per:
            rows = np.flatnonzero(regions[:, i] == sf.region)
            if rows.size >= 2:
                b = sf.bin_index(ds.X[rows, i])
                blocks.append(_Block(sf, rows, b, np.bincount(b, minlength=sf.n_bins).astype(float)))
    return blocks


def _tree_on_bins(cnt, sm, depth, leaf_min, order):
    """Least-squares tree over ordered bins; returns the per-bin leaf means.

    ``order`` is the bin order along which splits are searched.
    """
    step = np.zeros(cnt.size)

    def grow(lo, hi, level):
        idx = order[lo:hi]
        n, s = cnt[idx].sum(), sm[idx].sum()
        if n == 0:
            return
        if level < depth and hi - lo > 1:
            cn = np.cumsum(cnt[idx])[:-1]
            cs = np.cumsum(sm[idx])[:-1]
            nr = n - cn
            ok = (cn >= leaf_min) & (nr >= leaf_min)
            if ok.any():
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = np.where(ok, cs * cs / cn + (s - cs) ** 2 / nr - s * s / n, -np.inf)
                k = int(np.argmax(gain))
                if gain[k] > 1e-14 * max(1.0, abs(s * s / n)):
                    grow(lo, lo + k + 1, level + 1)
                    grow(lo + k + 1, hi, level + 1)
                    return
        step[idx] = s / n

    grow(0, cnt.size, 0)
    return step


def _loss(task, y, F):
    if task == BINARY:
        return float(np.mean(np.logaddexp(0.0, F) - y * F))
    return float(np.mean((y - F) ** 2))


def _initial_intercept(ds: Dataset) -> float:
    return clamped_logit(float(ds.y.mean())) if ds.task == BINARY else float(ds.y.mean())


def fit_calm_boost(ds: Dataset, partitions: PartitionSet, config: FitConfig | None = None) -> FitResult:
    """Round-robin regional gradient boosting.

    Every round visits each (feature, region) block, fits a depth-limited
    tree over the block's bins to the current residuals ``y - F`` (or
    ``y - sigmoid(F)``) of the in-region rows and adds ``learning_rate``
    times it to the shape. The result is centred before returning.
    """
    config = config or FitConfig()
    regions = partitions.assign(ds.X)
    shapes, blocks = _init_shapes(ds, regions, partitions, config, _initial_intercept(ds))
    y = ds.y
    F = np.full(ds.n, shapes.beta0)
    trace = [_loss(ds.task, y, F)]
    eta = config.learning_rate
    for _ in range(config.rounds):
        for blk in blocks:
            sf, rows, b, cnt = blk.shape, blk.rows, blk.bins, blk.counts
            Fr = F[rows]
            resid = y[rows] - (sigmoid(Fr) if ds.task == BINARY else Fr)
            sm = np.bincount(b, weights=resid, minlength=sf.n_bins)
            if sf.categorical:
                with np.errstate(invalid="ignore", divide="ignore"):
                    order = np.argsort(np.where(cnt > 0, sm / cnt, 0.0), kind="stable")
            else:
                order = np.arange(sf.n_bins)
            step = eta * _tree_on_bins(cnt, sm, config.learner_depth, config.leaf_min, order)
            sf.values += step
            F[rows] = Fr + step[b]
        trace.append(_loss(ds.task, y, F))
    center_shapes(shapes, ds.X, regions)
    return FitResult(shapes, trace, 0, False)


def fit_gam_boost(ds: Dataset, config: FitConfig | None = None) -> FitResult:
    """Plain GAM baseline: every feature has a single region."""
    return fit_calm_boost(ds, PartitionSet.trivial(ds.d, ds.n), config)


def _backfit_sweep(ds: Dataset, shapes: ShapeSet, blocks: list[_Block], regions: np.ndarray, F: np.ndarray, trace: list) -> float:
    y = ds.y
    max_change = 0.0
    for blk in blocks:
        sf, rows, b, cnt = blk.shape, blk.rows, blk.bins, blk.counts
        old = sf.full_values()
        partial = y[rows] - F[rows] + old[b]
        sm = np.bincount(b, weights=partial, minlength=sf.n_bins)
        new = old.copy()
        nz = cnt > 0
        new[nz] = sm[nz] / cnt[nz]
        delta = new - old
        F[rows] += delta[b]
        level = float(np.dot(cnt, new) / cnt.sum())
        sf.offset = level
        sf.values = new - level
        # the feature-wide mean level moves to the intercept; each row lies in
        # exactly one region of this feature, so F is unchanged
        per = shapes.shapes[sf.feature]
        sizes = np.bincount(regions[:, sf.feature], minlength=len(per) + 1)[1:]
        shift = float(np.dot(sizes, [s.offset for s in per]) / ds.n)
        for s in per:
            s.offset -= shift
        shapes.beta0 += shift
        if nz.any():
            max_change = max(max_change, float(np.max(np.abs(delta[nz]))))
        trace.append(float(np.mean((y - F) ** 2)))
    return max_change


def fit_calm_exact_backfit(ds: Dataset, partitions: PartitionSet, config: FitConfig | None = None) -> FitResult:
    """Exact cyclic regional backfitting (squared loss only).

    Bins are fixed per block from the region's sample quantiles. Each block
    update sets every non-empty bin to the mean partial residual of its
    in-region rows, which is the exact minimiser of the training MSE over
    that block. The MSE after every block update is appended to
    ``loss_trace``. Stops once a full sweep moves no bin value by more than
    ``tolerance`` or after ``sweeps`` sweeps.
    """
    config = config or FitConfig(mode=EXACT)
    if ds.task != REGRESSION:
        raise ValueError("exact backfitting is defined for squared loss (regression) only")
    regions = partitions.assign(ds.X)
    shapes, blocks = _init_shapes(ds, regions, partitions, config, float(ds.y.mean()))
    F = np.full(ds.n, shapes.beta0)
    trace = [float(np.mean((ds.y - F) ** 2))]
    converged = False
    sweeps = 0
    for sweeps in range(1, config.sweeps + 1):
        change = _backfit_sweep(ds, shapes, blocks, regions, F, trace)
        if change <= config.tolerance:
            converged = True
            break
    center_shapes(shapes, ds.X, regions)
    return FitResult(shapes, trace, sweeps, converged)


def backfit_extra_sweep(ds: Dataset, partitions: PartitionSet, shapes: ShapeSet) -> float:
    """Run one more exact sweep on a copy of ``shapes`` and return the largest
    bin change; a fixed point gives (numerically) zero."""
    shapes = copy.deepcopy(shapes)
    regions = partitions.assign(ds.X)
    F = shapes.score(ds.X, regions)
    return _backfit_sweep(ds, shapes, _blocks_for(ds, shapes, regions), regions, F, [])


def center_shapes(shapes: ShapeSet, X, regions) -> ShapeSet:
    """Give every curve zero mean over its region's rows, then move each
    feature's row-weighted mean level into the intercept. Scores on ``X`` are
    unchanged up to rounding. Works in place and returns ``shapes``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    for i, per in enumerate(shapes.shapes):
        total = 0.0
        for sf in per:
            rows = regions[:, i] == sf.region
            m = int(rows.sum())
            if m:
                mu = float(np.mean(sf.curve(X[rows, i])))
                sf.values = sf.values - mu
                sf.offset += mu
                total += m * sf.offset
        shift = total / n if n else 0.0
        for sf in per:
            sf.offset -= shift
        shapes.beta0 += shift
    return shapes
