"""Audit whether a model's score only ever rises with one feature.

A curve that rises everywhere is not enough. When another feature's tree
splits on the audited feature, crossing that threshold swaps curves
elsewhere in the model and can lower the score. The audit checks every
curve and every such hidden jump. On failure it searches the training rows
for a concrete counterexample.

Run: python3 demos/monotonicity_audit.py
"""

import numpy as np

from calm.fitting import ShapeFunction, ShapeSet
from calm.interpret import check_monotonicity, regional_sensitivity, vlines_for
from calm.model import CalmModel
from calm.partition import LT, PartitionNode, PartitionSet, PartitionTree, SplitRule
from calm.tabular import Dataset, FeatureMeta

rng = np.random.default_rng(0)
X = rng.uniform(-1, 1, (500, 2))
data = Dataset([FeatureMeta("dose"), FeatureMeta("age")], X, np.zeros(500))
edges = np.linspace(-1, 1, 41)
mids = 0.5 * (edges[:-1] + edges[1:])


def build(age_curve_right):
    """dose has one rising curve. age's tree splits on dose < 0.4 and uses a
    flat curve on the left and ``age_curve_right`` on the right."""
    split = PartitionNode(500, SplitRule(0, LT, 0.4), 1.0, PartitionNode(0), PartitionNode(0))
    parts = PartitionSet([PartitionTree.single_leaf(0, 500), PartitionTree(1, split)])
    shapes = ShapeSet(0.0, [
        [ShapeFunction(0, 1, edges, mids.copy())],
        [ShapeFunction(1, 1, edges, np.zeros(40)), ShapeFunction(1, 2, edges, age_curve_right(mids))],
    ])
    return CalmModel(data.schema, "regression", parts, shapes)


for title, curve in [
    ("age adds +0.37 past the threshold", lambda a: np.full_like(a, 0.37)),
    ("age adds -0.1 for the young, +0.2 for the old", lambda a: np.where(a < 0, -0.1, 0.2)),
]:
    model = build(curve)
    print(f"\n== {title}")
    for v in vlines_for(model, data, 0):
        print(f"hidden jump at dose = {v.threshold}: [{v.alpha:+.3f}, {v.beta:+.3f}] arrow {v.arrow}")
    verdict = check_monotonicity(model, data, 0)
    print(verdict.line())
    if verdict.witness:
        w = verdict.witness
        print(f"witness: row {w.row}, dose {w.x_from!r} -> {w.x_to!r} lowers the score "
              f"{w.score_from:+.4f} -> {w.score_to:+.4f}")
    ans = regional_sensitivity(model, data, [0.3, -0.5], 0, 0.2)
    print(f"raising dose 0.3 -> 0.5 for a young patient: score change in [{ans.low:+.3f}, {ans.high:+.3f}]")
