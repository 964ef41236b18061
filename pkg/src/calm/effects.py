"""PDP local effects and heterogeneity estimators.

For feature ``i`` the teacher is evaluated once on every (grid value,
background row) pair; the resulting M x N matrix of centred local effects is
all the partition search needs, so candidate splits become index lookups.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tabular import Dataset


class DegenerateFeature(ValueError):
    pass


@dataclass(frozen=True)
class EffectGrid:
    feature: int
    values: np.ndarray

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class LocalEffectsMatrix:
    """``H[m, n]`` is the centred teacher response with feature ``i`` set to
    ``grid.values[m]`` in background row ``n``; ``centering[n]`` is the grid
    mean that was subtracted."""

    feature: int
    grid: EffectGrid
    H: np.ndarray
    centering: np.ndarray

    @property
    def n(self) -> int:
        return self.H.shape[1]


def build_grid(ds: Dataset, i: int, M: int = 20) -> EffectGrid:
    """Numerical: ``M`` equally spaced quantiles (deduplicated). Categorical:
    every category code of the schema."""
    meta = ds.schema[i]
    if meta.is_categorical:
        values = np.arange(len(meta.categories), dtype=float)
    else:
        if M < 2:
            raise ValueError("grid size M must be at least 2")
        values = np.unique(np.quantile(ds.X[:, i], np.linspace(0.0, 1.0, M)))
    if values.size < 2:
        raise DegenerateFeature(f"degenerate feature {meta.name!r}: fewer than 2 distinct values")
    return EffectGrid(i, values)


def local_effects(predictor, ds: Dataset, i: int, grid: EffectGrid | None = None, M: int = 20) -> LocalEffectsMatrix:
    """Evaluate the teacher on the ``M x N`` substituted rows and centre each
    background row by its grid mean."""
    if grid is None:
        grid = build_grid(ds, i, M)
    m, n = grid.size, ds.n
    Xrep = np.tile(ds.X, (m, 1))
    Xrep[:, i] = np.repeat(grid.values, n)
    F = np.asarray(predictor.predict_raw(Xrep), dtype=float).reshape(m, n)
    c = F.mean(axis=0)
    H = F - c
    # second pass removes the O(eps * |F|) residue of the first subtraction
    H -= H.mean(axis=0)
    return LocalEffectsMatrix(i, grid, H, c)


def _active(active) -> np.ndarray:
    idx = np.asarray(active)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise ValueError("active set is empty")
    return idx


def pointwise_h(matrix: LocalEffectsMatrix, active, m: int) -> float:
    """Population variance of row ``m`` of the effects over the active rows."""
    row = matrix.H[m, _active(active)]
    return float(np.mean((row - row.mean()) ** 2))


def feature_h(matrix: LocalEffectsMatrix, active=None) -> float:
    """Grid average of :func:`pointwise_h`."""
    H = matrix.H if active is None else matrix.H[:, _active(active)]
    mu = H.mean(axis=1, keepdims=True)
    return float(np.mean((H - mu) ** 2))


def dump_effects(matrix: LocalEffectsMatrix, path) -> None:
    """Debug dump: one CSV row per grid value, one column per background row."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid_value"] + [f"row{n}" for n in range(matrix.n)])
        for v, row in zip(matrix.grid.values, matrix.H):
            w.writerow([repr(float(v))] + [repr(float(h)) for h in row])
