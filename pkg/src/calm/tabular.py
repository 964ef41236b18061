"""Tabular data: schema, CSV ingestion, z-score scaling and CV folds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
REGRESSION = "regression"
BINARY = "binary"


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: str = NUMERICAL
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise DataError(f"unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL and not self.categories:
            raise DataError(f"categorical feature {self.name!r} has no categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMeta":
        return cls(d["name"], d["kind"], tuple(d.get("categories", ())))


@dataclass
class ScalerState:
    """Per-column z-score parameters (population std).

    Constant numerical columns get ``std = 1``, are listed in ``constant``
    and pass through unscaled.
    """

    mean: np.ndarray
    std: np.ndarray
    scaled: np.ndarray  # bool mask: numerical and non-constant
    constant: tuple[int, ...] = ()
    target_mean: float | None = None
    target_std: float | None = None

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "scaled": [bool(v) for v in self.scaled],
            "constant": list(self.constant),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerState":
        return cls(
            mean=np.asarray(d["mean"], dtype=float),
            std=np.asarray(d["std"], dtype=float),
            scaled=np.asarray(d["scaled"], dtype=bool),
            constant=tuple(d.get("constant", ())),
            target_mean=d.get("target_mean"),
            target_std=d.get("target_std"),
        )


@dataclass
class Dataset:
    schema: list[FeatureMeta]
    X: np.ndarray
    y: np.ndarray
    task: str = REGRESSION
    scaler: ScalerState | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.schema):
            raise DataError(
                f"X has shape {self.X.shape}, expected (N, {len(self.schema)})"
            )
        if self.y.shape != (self.X.shape[0],):
            raise DataError("y must have one entry per row of X")
        names = [f.name for f in self.schema]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if self.task not in (REGRESSION, BINARY):
            raise DataError(f"unknown task {self.task!r}")
        if self.task == BINARY and not np.all(np.isin(self.y, (0.0, 1.0))):
            raise DataError("binary task requires targets in {0, 1}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("dataset contains missing or non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.schema]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.schema], dtype=bool)

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


def _parse_float(s: str) -> float | None:
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(
    path,
    schema: list[FeatureMeta] | None = None,
    target: str | None = None,
    task: str | None = None,
) -> Dataset:
    """Read a CSV with a header row into a :class:`Dataset`.

    The target is the last column unless ``target`` names another one.
    Without an explicit schema, a column whose every cell parses as a finite
    float is numerical, anything else is categorical with categories in order
    of first appearance. ``task`` defaults to ``binary`` when every target is
    0 or 1 and to ``regression`` otherwise.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: no rows")
    header, body = rows[0], rows[1:]
    body = [r for r in body if r]  # trailing blank lines
    if not body:
        raise DataError(f"{path}: no rows")
    ncol = len(header)
    if ncol < 2:
        raise DataError(f"{path}: need at least one feature and a target column")
    for r, row in enumerate(body, start=2):
        if len(row) != ncol:
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {ncol}")
        for c, cell in enumerate(row):
            if cell.strip() == "":
                raise DataError(f"{path}: missing value at row {r}, column {header[c]!r}")

    if target is None:
        t_col = ncol - 1
    elif target in header:
        t_col = header.index(target)
    else:
        raise DataError(f"{path}: no target column {target!r}")
    f_cols = [c for c in range(ncol) if c != t_col]

    if schema is None:
        schema = []
        for c in f_cols:
            cells = [row[c].strip() for row in body]
            if all(_parse_float(v) is not None for v in cells):
                schema.append(FeatureMeta(header[c], NUMERICAL))
            else:
                cats = tuple(dict.fromkeys(cells))
                schema.append(FeatureMeta(header[c], CATEGORICAL, cats))
    elif len(schema) != len(f_cols):
        raise DataError(f"{path}: schema has {len(schema)} features, file has {len(f_cols)}")

    X = np.empty((len(body), len(f_cols)))
    for k, (c, meta) in enumerate(zip(f_cols, schema)):
        if meta.is_categorical:
            lookup = {v: i for i, v in enumerate(meta.categories)}
            for r, row in enumerate(body):
                cell = row[c].strip()
                if cell not in lookup:
                    raise DataError(
                        f"{path}: unknown category {cell!r} at row {r + 2}, column {header[c]!r}"
                    )
                X[r, k] = lookup[cell]
        else:
            for r, row in enumerate(body):
                v = _parse_float(row[c].strip())
                if v is None:
                    raise DataError(
                        f"{path}: non-numeric value {row[c]!r} at row {r + 2}, column {header[c]!r}"
                    )
                X[r, k] = v

    y = np.empty(len(body))
    for r, row in enumerate(body):
        v = _parse_float(row[t_col].strip())
        if v is None:
            raise DataError(f"{path}: non-numeric target {row[t_col]!r} at row {r + 2}")
        y[r] = v
    if task is None:
        task = BINARY if np.all(np.isin(y, (0.0, 1.0))) else REGRESSION
    elif task == BINARY and not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError(f"{path}: binary task requires targets in {{0, 1}}")
    return Dataset(schema, X, y, task)


def save_csv(ds: Dataset, path, target_name: str = "y") -> None:
    """Write ``ds`` as CSV; floats use ``repr`` so a reload is exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names + [target_name])
        for row, t in zip(ds.X, ds.y):
            cells = []
            for v, meta in zip(row, ds.schema):
                cells.append(meta.categories[int(v)] if meta.is_categorical else repr(float(v)))
            w.writerow(cells + [repr(float(t))])


def fit_scaler(ds: Dataset) -> ScalerState:
    num = ~ds.categorical_mask
    mean = np.zeros(ds.d)
    std = np.ones(ds.d)
    mean[num] = ds.X[:, num].mean(axis=0)
    sd = ds.X[:, num].std(axis=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mean[num]))
    sd[const] = 1.0
    std[num] = sd
    scaled = num.copy()
    scaled[np.flatnonzero(num)[const]] = False
    constant = tuple(int(j) for j in np.flatnonzero(num)[const])
    tm = ts = None
    if ds.task == REGRESSION:
        tm = float(ds.y.mean())
        ts = float(ds.y.std())
        if ts <= 1e-12 * max(1.0, abs(tm)):
            ts = 1.0
    return ScalerState(mean, std, scaled, constant, tm, ts)


def apply_scaler(ds: Dataset, scaler: ScalerState) -> Dataset:
    X = transform_features(ds.X, scaler)
    y = ds.y
    if ds.task == REGRESSION and scaler.target_mean is not None:
        y = (y - scaler.target_mean) / scaler.target_std
    return replace(ds, X=X, y=y, scaler=scaler)


def transform_features(X: np.ndarray, scaler: ScalerState) -> np.ndarray:
    X = np.array(X, dtype=float, copy=True)
    s = scaler.scaled
    X[:, s] = (X[:, s] - scaler.mean[s]) / scaler.std[s]
    return X


def invert_target(y, scaler: ScalerState | None):
    if scaler is None or scaler.target_mean is None:
        return np.asarray(y, dtype=float)
    return np.asarray(y, dtype=float) * scaler.target_std + scaler.target_mean


def kfold(n: int, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold split; the first ``n % k`` test folds get one extra row."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = []
    for test in np.array_split(perm, k):
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((np.flatnonzero(mask), np.sort(test)))
    return folds


def load_rows(path, schema: list[FeatureMeta]) -> np.ndarray:
    """Read feature rows for scoring from a CSV whose header names every
    schema feature; other columns (such as a target) are ignored."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: no rows")
    header, body = rows[0], [r for r in rows[1:] if r]
    cols = []
    for meta in schema:
        if meta.name not in header:
            raise DataError(f"{path}: missing feature column {meta.name!r}")
        cols.append(header.index(meta.name))
    X = np.empty((len(body), len(schema)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        X[r] = encode_row({m.name: row[c] for m, c in zip(schema, cols)}, schema, where=f"{path}: row {r + 2}")
    return X


def encode_row(values, schema: list[FeatureMeta], where: str = "row") -> np.ndarray:
    """Encode one row given as a name -> value mapping or a sequence in schema
    order; categorical values may be labels or integer codes."""
    if isinstance(values, dict):
        missing = [m.name for m in schema if m.name not in values]
        if missing:
            raise DataError(f"{where}: missing feature {missing[0]!r}")
        cells = [values[m.name] for m in schema]
    else:
        cells = list(values)
        if len(cells) != len(schema):
            raise DataError(f"{where}: expected {len(schema)} values, got {len(cells)}")
    out = np.empty(len(schema))
    for k, (meta, cell) in enumerate(zip(schema, cells)):
        text = str(cell).strip()
        if text == "":
            raise DataError(f"{where}: missing value for {meta.name!r}")
        if meta.is_categorical:
            if text in meta.categories:
                out[k] = meta.categories.index(text)
            elif isinstance(cell, (int, float)) and float(cell).is_integer() and 0 <= cell < len(meta.categories):
                out[k] = float(cell)
            else:
                raise DataError(f"{where}: unknown category {text!r} for {meta.name!r}")
        else:
            v = _parse_float(text)
            if v is None:
                raise DataError(f"{where}: non-numeric value {text!r} for {meta.name!r}")
            out[k] = v
    return out
