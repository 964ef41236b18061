"""Hand-built models and small datasets shared by the tests."""

import numpy as np

from calm.fitting import ShapeFunction, ShapeSet
from calm.model import CalmModel
from calm.partition import LT, PartitionNode, PartitionSet, PartitionTree, SplitRule
from calm.tabular import REGRESSION, Dataset, FeatureMeta


def schema(d):
    return [FeatureMeta(f"x{i + 1}") for i in range(d)]


def const_shape(i, r, value, lo=-1.0, hi=1.0):
    return ShapeFunction(i, r, np.array([lo, hi]), np.array([0.0]), float(value))


def step_shape(i, r, fn, lo=-1.0, hi=1.0, bins=200):
    """Piecewise-constant approximation of ``fn`` on ``bins`` equal bins."""
    edges = np.linspace(lo, hi, bins + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return ShapeFunction(i, r, edges, np.asarray(fn(mids), dtype=float), 0.0)


def split_tree(owner, feature, tau):
    root = PartitionNode(count=0, rule=SplitRule(feature, LT, tau), drop=1.0,
                         left=PartitionNode(count=0), right=PartitionNode(count=0))
    return PartitionTree(owner, root)


def leaf_tree(owner):
    return PartitionTree.single_leaf(owner)


def make_model(trees, shapes, beta0=0.0, task=REGRESSION):
    return CalmModel(schema(len(trees)), task, PartitionSet(trees), ShapeSet(beta0, shapes))


def vline_model(f22=None):
    """x1 has a flat curve; x2's tree splits on x1 < 0.4 with f2 = 0 on the
    left and ``f22`` (default the constant 0.37) on the right."""
    right = const_shape(1, 2, 0.37) if f22 is None else step_shape(1, 2, f22)
    return make_model(
        [leaf_tree(0), split_tree(1, 0, 0.4)],
        [[const_shape(0, 1, 0.0)], [const_shape(1, 1, 0.0), right]],
    )


def uniform_data(n, d, seed=0, fn=None):
    X = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, d))
    y = np.zeros(n) if fn is None else fn(X)
    return Dataset(schema(d), X, y, REGRESSION)
