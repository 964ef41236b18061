"""The deployable CALM predictor and the end-to-end training pipeline.

A fitted model scores raw-unit rows: partition thresholds and shape
breakpoints are mapped back through the feature scaler after fitting, so only
the target scaler is applied at prediction time.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .effects import DegenerateFeature, LocalEffectsMatrix, build_grid, local_effects
from .fitting import EXACT, FitConfig, FitResult, ShapeSet, fit_calm_boost, fit_calm_exact_backfit
from .gbdt import GbdtConfig, GbdtModel, gbdt_fit, sigmoid
from .partition import PartitionParams, PartitionSet, learn_partitions
from .tabular import BINARY, Dataset, FeatureMeta, ScalerState, apply_scaler, fit_scaler

FORMAT = "calm-model"
VERSION = 1
IDENTITY = "identity"
LOGIT = "logit"


class ModelFormatError(ValueError):
    """Raised when a model file cannot be read back."""


@dataclass
class CalmModel:
    """Intercept, link, one partition tree and one shape set per feature.

    ``scaler`` keeps the training feature statistics for reference; only its
    target part is used, by :meth:`predict` on regression models. ``jumps``
    caches the hidden-jump records measured on the training rows (feature
    index -> list of dicts) so explanations work without the data; ``meta``
    records how the model was trained.
    """

    schema: list[FeatureMeta]
    task: str
    partitions: PartitionSet
    shapes: ShapeSet
    scaler: ScalerState | None = None
    jumps: dict[int, list[dict]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = len(self.schema)
        if len(self.partitions.trees) != d or len(self.shapes.shapes) != d:
            raise ValueError("need exactly one partition tree and one shape set per feature")
        for i, (tree, per) in enumerate(zip(self.partitions.trees, self.shapes.shapes)):
            if [s.region for s in per] != list(range(1, tree.n_regions + 1)):
                raise ValueError(f"shapes of feature {i} do not match the leaves of its partition tree")

    @property
    def link(self) -> str:
        return LOGIT if self.task == BINARY else IDENTITY

    @property
    def beta0(self) -> float:
        return self.shapes.beta0

    @property
    def d(self) -> int:
        return len(self.schema)

    @property
    def n_interactions(self) -> int:
        return self.partitions.n_interactions

    def _rows(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise ValueError(f"rows have {X.shape[1]} columns, model expects {self.d}")
        return X

    def regions(self, X) -> np.ndarray:
        return self.partitions.assign(self._rows(X))

    def contributions(self, X) -> np.ndarray:
        X = self._rows(X)
        return self.shapes.contributions(X, self.partitions.assign(X))

    def score(self, X) -> np.ndarray:
        """Additive score before the link, one per row."""
        X = self._rows(X)
        return self.shapes.score(X, self.partitions.assign(X))

    def predict(self, X) -> np.ndarray:
        """Target-scale predictions (regression) or probabilities (binary)."""
        s = self.score(X)
        if self.link == LOGIT:
            return sigmoid(s)
        sc = self.scaler
        if sc is None or sc.target_mean is None:
            return s
        return s * sc.target_std + sc.target_mean

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "task": self.task,
            "link": self.link,
            "schema": [m.to_dict() for m in self.schema],
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "beta0": float(self.shapes.beta0),
            "partitions": self.partitions.to_dict()["trees"],
            "shapes": [[s.to_dict() for s in per] for per in self.shapes.shapes],
            "jumps": {str(i): v for i, v in sorted(self.jumps.items())},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalmModel":
        if not isinstance(d, dict) or d.get("format") != FORMAT:
            raise ModelFormatError("not a CALM model file")
        if d.get("version") != VERSION:
            raise ModelFormatError(f"unsupported model version {d.get('version')!r} (expected {VERSION})")
        try:
            model = cls(
                schema=[FeatureMeta.from_dict(m) for m in d["schema"]],
                task=d["task"],
                partitions=PartitionSet.from_dict({"trees": d["partitions"]}),
                shapes=ShapeSet.from_dict({"beta0": d["beta0"], "shapes": d["shapes"]}),
                scaler=None if d["scaler"] is None else ScalerState.from_dict(d["scaler"]),
                jumps={int(i): v for i, v in d.get("jumps", {}).items()},
                meta=d.get("meta", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"invalid model file: {exc}") from exc
        if d.get("link") != model.link:
            raise ModelFormatError(f"link {d.get('link')!r} does not match task {model.task!r}")
        return model

    def save(self, path) -> None:
        # json writes floats with repr, so values round-trip bit-exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CalmModel":
        text = Path(path).read_text(encoding="utf-8")
        if not text.strip():
            raise ModelFormatError(f"{path}: empty model file")
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: truncated or malformed model file ({exc.msg})") from exc
        return cls.from_dict(d)


def score(model: CalmModel, rows) -> np.ndarray:
    return model.score(rows)


def predict(model: CalmModel, rows) -> np.ndarray:
    return model.predict(rows)


def save(model: CalmModel, path) -> None:
    model.save(path)


def load(path) -> CalmModel:
    return CalmModel.load(path)


@dataclass
class PipelineConfig:
    """Every knob of the three training steps."""

    teacher: GbdtConfig = field(default_factory=GbdtConfig)
    grid: int = 20
    partition: PartitionParams = field(default_factory=PartitionParams)
    fit: FitConfig = field(default_factory=FitConfig)

    def to_dict(self) -> dict:
        out = asdict(self)
        k = out["partition"]["K"]
        out["partition"]["K"] = "inf" if math.isinf(k) else k
        return out


@dataclass
class TrainResult:
    model: CalmModel
    teacher: GbdtModel
    matrices: dict[int, LocalEffectsMatrix]
    fit: FitResult
    scaled: Dataset  # the training data in the units the fit saw


def _to_raw(scaler: ScalerState):
    def fn(j, v):
        if not scaler.scaled[j]:
            return v
        return np.asarray(v, dtype=float) * scaler.std[j] + scaler.mean[j]

    return fn


def train_calm(ds: Dataset, config: PipelineConfig | None = None) -> TrainResult:
    """Scale, fit the teacher, compute local effects, learn partitions, fit
    the shapes, then express every threshold and breakpoint in raw units."""
    config = config or PipelineConfig()
    scaler = fit_scaler(ds)
    sds = apply_scaler(ds, scaler)
    teacher = gbdt_fit(sds, config.teacher)
    matrices = {}
    for i in range(ds.d):
        try:
            grid = build_grid(sds, i, config.grid)
        except DegenerateFeature as exc:
            warnings.warn(f"{exc}; its partition tree stays a single leaf")
            continue
        matrices[i] = local_effects(teacher, sds, i, grid)
    score_var = float(np.var(teacher.predict_raw(sds.X)))
    partitions = learn_partitions(sds, matrices, config.partition, score_var)
    if config.fit.mode == EXACT:
        result = fit_calm_exact_backfit(sds, partitions, config.fit)
    else:
        result = fit_calm_boost(sds, partitions, config.fit)

    model = _in_raw_units(ds, scaler, partitions, result.shapes)
    model.meta = {"config": config.to_dict(), "n_train": ds.n}
    record_jumps(model, ds)
    return TrainResult(model, teacher, matrices, result, sds)


def train_gam(ds: Dataset, config: PipelineConfig | None = None) -> CalmModel:
    """Baseline: the same shape fit with every partition a single leaf."""
    config = config or PipelineConfig()
    scaler = fit_scaler(ds)
    sds = apply_scaler(ds, scaler)
    partitions = PartitionSet.trivial(ds.d, ds.n)
    result = fit_calm_boost(sds, partitions, config.fit)
    return _in_raw_units(ds, scaler, partitions, result.shapes)


def _in_raw_units(ds: Dataset, scaler: ScalerState, partitions: PartitionSet, shapes: ShapeSet) -> CalmModel:
    raw_parts = PartitionSet.from_dict(partitions.to_dict())
    raw_shapes = ShapeSet.from_dict(shapes.to_dict())
    to_raw = _to_raw(scaler)
    for tree in raw_parts.trees:
        tree.map_thresholds(lambda j, t: float(to_raw(j, t)))
    raw_shapes.map_edges(to_raw)
    return CalmModel(list(ds.schema), ds.task, raw_parts, raw_shapes, scaler)


def record_jumps(model: CalmModel, ds: Dataset) -> None:
    """Store the hidden-jump records of every numerical feature, measured on
    ``ds`` (raw units), in ``model.jumps``."""
    from .interpret import vlines_for  # interpret builds on this module

    model.jumps = {
        i: [v.to_dict() for v in vlines_for(model, ds, i)]
        for i in range(model.d)
        if not model.schema[i].is_categorical
    }


def count_interactions(model: CalmModel) -> int:
    """Internal split nodes summed over all partition trees."""
    return model.partitions.n_interactions
