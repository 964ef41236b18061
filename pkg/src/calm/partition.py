"""Per-feature partition trees grown by greedy heterogeneity reduction."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .effects import LocalEffectsMatrix, feature_h
from .tabular import Dataset, FeatureMeta

LT, GE, EQ, NE = "<", ">=", "==", "!="
_NEGATE = {LT: GE, GE: LT, EQ: NE, NE: EQ}
_SYMBOL = {LT: "<", GE: "≥", EQ: "=", NE: "≠"}
H_FLOOR = 1e-12


@dataclass(frozen=True)
class SplitRule:
    feature: int
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in _NEGATE:
            raise ValueError(f"unknown operator {self.op!r}")

    def negate(self) -> "SplitRule":
        return SplitRule(self.feature, _NEGATE[self.op], self.threshold)

    def holds(self, X) -> np.ndarray:
        x = np.asarray(X, dtype=float)[..., self.feature]
        if self.op == LT:
            return x < self.threshold
        if self.op == GE:
            return x >= self.threshold
        if self.op == EQ:
            return x == self.threshold
        return x != self.threshold

    def label(self, schema: list[FeatureMeta] | None = None) -> str:
        if schema is None:
            return f"x{self.feature + 1} {_SYMBOL[self.op]} {self.threshold:.4g}"
        meta = schema[self.feature]
        if meta.is_categorical:
            value = meta.categories[int(self.threshold)]
        else:
            value = f"{self.threshold:.4g}"
        return f"{meta.name} {_SYMBOL[self.op]} {value}"


@dataclass
class PartitionNode:
    count: int
    rule: SplitRule | None = None  # rows satisfying it go left
    drop: float = 0.0
    left: "PartitionNode | None" = None
    right: "PartitionNode | None" = None
    region: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.rule is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"region": self.region, "count": self.count}
        return {
            "feature": self.rule.feature,
            "op": self.rule.op,
            "threshold": float(self.rule.threshold),
            "drop": float(self.drop),
            "count": self.count,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionNode":
        if "region" in d:
            return cls(count=d["count"], region=d["region"])
        return cls(
            count=d["count"],
            rule=SplitRule(d["feature"], d["op"], d["threshold"]),
            drop=d["drop"],
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass
class PartitionTree:
    """Binary tree over the other features; its leaves are the regions of
    ``owner``. Region ids run 1..R in left-to-right leaf order."""

    owner: int
    root: PartitionNode
    max_depth: int = 2

    def __post_init__(self):
        self.renumber()

    def renumber(self) -> None:
        for r, leaf in enumerate(self.leaves(), start=1):
            leaf.region = r

    def leaves(self) -> list[PartitionNode]:
        out = []

        def walk(node):
            if node.is_leaf:
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def internal_nodes(self) -> list[PartitionNode]:
        out = []

        def walk(node):
            if not node.is_leaf:
                out.append(node)
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    @property
    def n_regions(self) -> int:
        return len(self.leaves())

    @property
    def n_internal(self) -> int:
        return len(self.internal_nodes())

    @property
    def depth(self) -> int:
        def walk(node):
            return 0 if node.is_leaf else 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def assign(self, X) -> np.ndarray:
        """Region id of every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0], dtype=np.int64)

        def walk(node, idx):
            if node.is_leaf:
                out[idx] = node.region
                return
            go = node.rule.holds(X[idx])
            walk(node.left, idx[go])
            walk(node.right, idx[~go])

        walk(self.root, np.arange(X.shape[0]))
        return out

    def conjunctions(self) -> dict[int, list[SplitRule]]:
        """Region id -> the rules on its root-to-leaf path."""
        out = {}

        def walk(node, path):
            if node.is_leaf:
                out[node.region] = path
            else:
                walk(node.left, path + [node.rule])
                walk(node.right, path + [node.rule.negate()])

        walk(self.root, [])
        return out

    def region_label(self, region: int, schema=None) -> str:
        rules = self.conjunctions()[region]
        return " ∧ ".join(r.label(schema) for r in rules) if rules else "all"

    def split_thresholds(self, feature: int) -> list[float]:
        return sorted({n.rule.threshold for n in self.internal_nodes() if n.rule.feature == feature})

    def map_thresholds(self, fn) -> None:
        """Apply ``fn(feature, threshold)`` to every numerical split in place."""
        for node in self.internal_nodes():
            if node.rule.op in (LT, GE):
                node.rule = SplitRule(node.rule.feature, node.rule.op, float(fn(node.rule.feature, node.rule.threshold)))

    def to_text(self, schema=None) -> str:
        """Indented rule dump, one line per branch and per region."""
        name = schema[self.owner].name if schema else f"x{self.owner + 1}"
        lines = [f"tree for {name}"]

        def leaf(node):
            return f"region {node.region} (n={node.count})"

        def walk(node, depth):
            pad = "  " * depth
            for child, rule in ((node.left, node.rule), (node.right, node.rule.negate())):
                if child.is_leaf:
                    lines.append(f"{pad}{rule.label(schema)} -> {leaf(child)}")
                else:
                    lines.append(f"{pad}{rule.label(schema)}")
                    walk(child, depth + 1)

        if self.root.is_leaf:
            lines.append(f"  all -> {leaf(self.root)}")
        else:
            walk(self.root, 1)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"owner": self.owner, "max_depth": self.max_depth, "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionTree":
        return cls(d["owner"], PartitionNode.from_dict(d["root"]), d["max_depth"])

    @classmethod
    def single_leaf(cls, owner: int, count: int = 0, max_depth: int = 2) -> "PartitionTree":
        return cls(owner, PartitionNode(count=count), max_depth)


@dataclass
class PartitionSet:
    trees: list[PartitionTree]

    @property
    def n_interactions(self) -> int:
        return sum(t.n_internal for t in self.trees)

    @property
    def n_regions(self) -> list[int]:
        return [t.n_regions for t in self.trees]

    def assign(self, X) -> np.ndarray:
        """N x d table of region ids."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([t.assign(X) for t in self.trees]) if self.trees else np.zeros((X.shape[0], 0), int)

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSet":
        return cls([PartitionTree.from_dict(t) for t in d["trees"]])

    @classmethod
    def trivial(cls, d: int, n: int = 0) -> "PartitionSet":
        return cls([PartitionTree.single_leaf(i, n) for i in range(d)])


@dataclass
class PartitionParams:
    d_max: int = 2
    eps: float = 0.2
    T: int = 21
    min_leaf: int | None = None  # None -> max(20, ceil(0.05 N))
    thresholds: str = "grid"  # or "unique": midpoints of observed values
    K: float = math.inf
    h_min_rel: float = 0.01  # nodes with H below this share of the score variance stay leaves

    def resolve_min_leaf(self, n: int) -> int:
        if self.min_leaf is not None:
            return int(self.min_leaf)
        return max(20, math.ceil(0.05 * n))


def candidate_thresholds(ds: Dataset, j: int, T: int = 21, mode: str = "grid") -> list[float]:
    """``T`` equally spaced interior points of the column range, or every
    observed category code. A constant column yields no candidates.

    ``mode="unique"`` uses the midpoints between consecutive distinct values
    instead of the grid.
    """
    x = ds.X[:, j]
    if ds.schema[j].is_categorical:
        cats = np.unique(x)
        return [float(c) for c in cats] if cats.size > 1 else []
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        return []
    if mode == "unique":
        u = np.unique(x)
        return [float(v) for v in 0.5 * (u[:-1] + u[1:])]
    if mode != "grid":
        raise ValueError(f"unknown threshold mode {mode!r}")
    return [lo + (hi - lo) * k / (T + 1) for k in range(1, T + 1)]


def heter_drop(matrix: LocalEffectsMatrix, I, I_L, I_R) -> float | None:
    """Relative heterogeneity reduction of splitting ``I`` into ``I_L, I_R``.

    Returns ``None`` when the parent heterogeneity is below the floor, i.e.
    there is nothing to explain and the split is rejected.
    """
    I, I_L, I_R = (np.asarray(a, dtype=np.int64) for a in (I, I_L, I_R))
    if I_L.size == 0 or I_R.size == 0:
        raise ValueError("both children must be non-empty")
    if I_L.size + I_R.size != I.size or not np.array_equal(np.sort(np.concatenate([I_L, I_R])), np.sort(I)):
        raise ValueError("children must partition the parent index set")
    h = feature_h(matrix, I)
    if h < H_FLOOR:
        return None
    w_l, w_r = I_L.size / I.size, I_R.size / I.size
    return (h - (w_l * feature_h(matrix, I_L) + w_r * feature_h(matrix, I_R))) / h


def _numeric_drops(Hc: np.ndarray, x: np.ndarray, taus: np.ndarray, h_parent: float):
    """Drops for every threshold at once via prefix sums over rows sorted by
    ``x``. ``Hc`` holds the parent's effects with grid-row means removed."""
    n = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    Hs = Hc[:, order]
    s1 = np.concatenate([np.zeros((Hs.shape[0], 1)), np.cumsum(Hs, axis=1)], axis=1)
    s2 = np.concatenate([np.zeros((Hs.shape[0], 1)), np.cumsum(Hs * Hs, axis=1)], axis=1)
    nl = np.searchsorted(xs, taus, side="left")  # rows with x < tau
    valid = (nl > 0) & (nl < n)
    m = nl[valid]
    a1, a2 = s1[:, m], s2[:, m]
    b1, b2 = s1[:, [n]] - a1, s2[:, [n]] - a2
    sse = np.sum(a2 - a1 * a1 / m, axis=0) + np.sum(b2 - b1 * b1 / (n - m), axis=0)
    within = np.maximum(sse / (n * Hc.shape[0]), 0.0)
    drops = np.full(taus.size, -np.inf)
    drops[valid] = (h_parent - within) / h_parent
    return drops, nl


def build_tree(
    i: int,
    ds: Dataset,
    matrix: LocalEffectsMatrix,
    params: PartitionParams | None = None,
    score_var: float | None = None,
) -> PartitionTree:
    """Greedy partition tree for feature ``i``.

    At each node every other feature and candidate threshold is scored by its
    heterogeneity drop; the best split is kept when the drop exceeds ``eps``
    and both children hold at least ``min_leaf`` rows. Ties go to the lower
    feature index, then the lower threshold.

    A node whose heterogeneity is below ``h_min_rel * score_var`` is not
    split: the relative drop of a near-zero heterogeneity only measures
    teacher noise. ``score_var`` is the variance of the teacher's scores on
    the training rows and defaults to the variance of ``ds.y``.
    """
    params = params or PartitionParams()
    if score_var is None:
        score_var = float(np.var(ds.y)) if ds.n else 0.0
    h_min = max(H_FLOOR, params.h_min_rel * score_var)
    if matrix.feature != i:
        raise ValueError(f"effects matrix is for feature {matrix.feature}, not {i}")
    min_leaf = params.resolve_min_leaf(ds.n)
    cands = {j: np.asarray(candidate_thresholds(ds, j, params.T, params.thresholds)) for j in range(ds.d) if j != i}

    def grow(I, depth):
        node = PartitionNode(count=int(I.size))
        if depth >= params.d_max or I.size < 2 * min_leaf:
            return node
        HI = matrix.H[:, I]
        Hc = HI - HI.mean(axis=1, keepdims=True)
        h = float(np.mean(Hc * Hc))
        if h < h_min:
            return node
        best = (-np.inf, None)
        for j, taus in cands.items():
            if taus.size == 0:
                continue
            x = ds.X[I, j]
            if ds.schema[j].is_categorical:
                for tau in taus:
                    left = x == tau
                    m = int(left.sum())
                    if m < min_leaf or I.size - m < min_leaf:
                        continue
                    hl = np.mean((Hc[:, left] - Hc[:, left].mean(axis=1, keepdims=True)) ** 2)
                    hr = np.mean((Hc[:, ~left] - Hc[:, ~left].mean(axis=1, keepdims=True)) ** 2)
                    drop = (h - (m * hl + (I.size - m) * hr) / I.size) / h
                    if drop > best[0]:
                        best = (drop, SplitRule(j, EQ, float(tau)))
            else:
                drops, nl = _numeric_drops(Hc, x, taus, h)
                ok = (nl >= min_leaf) & (I.size - nl >= min_leaf)
                drops = np.where(ok, drops, -np.inf)
                if drops.size and np.isfinite(drops.max()):
                    k = int(np.argmax(drops))  # first maximum -> lowest threshold
                    if drops[k] > best[0]:
                        best = (float(drops[k]), SplitRule(j, LT, float(taus[k])))
        drop, rule = best
        if rule is None or not drop > params.eps:
            return node
        go = rule.holds(ds.X[I])
        node.rule, node.drop = rule, float(drop)
        node.left = grow(I[go], depth + 1)
        node.right = grow(I[~go], depth + 1)
        return node

    return PartitionTree(i, grow(np.arange(ds.n), 0), params.d_max)


def prune_top_k(pset: PartitionSet, K) -> PartitionSet:
    """Keep the ``K`` largest-drop split nodes across all trees such that no
    node is kept without its parent; everything else collapses to leaves.

    Selection is greedy over the admissible frontier: a child becomes
    eligible once its parent has been kept.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    out = PartitionSet.from_dict(pset.to_dict())
    if K >= out.n_interactions:
        return out
    heap, keep, tick = [], set(), 0

    def push(t, node):
        nonlocal tick
        if not node.is_leaf:
            # ties: owner feature, then discovery order
            heapq.heappush(heap, (-node.drop, t, tick, node))
            tick += 1

    for t, tree in enumerate(out.trees):
        push(t, tree.root)
    while heap and len(keep) < K:
        _, t, _, node = heapq.heappop(heap)
        keep.add(id(node))
        push(t, node.left)
        push(t, node.right)

    def collapse(node):
        if node.is_leaf:
            return
        if id(node) not in keep:
            node.rule, node.drop, node.left, node.right = None, 0.0, None, None
            return
        collapse(node.left)
        collapse(node.right)

    for tree in out.trees:
        collapse(tree.root)
        tree.renumber()
    return out


def learn_partitions(
    ds: Dataset,
    matrices: dict[int, LocalEffectsMatrix],
    params: PartitionParams | None = None,
    score_var: float | None = None,
) -> PartitionSet:
    """One tree per feature (single leaf when a feature has no effects
    matrix), then top-K pruning when ``params.K`` is finite."""
    params = params or PartitionParams()
    trees = []
    for i in range(ds.d):
        if i in matrices:
            trees.append(build_tree(i, ds, matrices[i], params, score_var))
        else:
            trees.append(PartitionTree.single_leaf(i, ds.n, params.d_max))
    pset = PartitionSet(trees)
    if math.isfinite(params.K):
        pset = prune_top_k(pset, int(params.K))
    return pset
