"""Synthetic benchmark cases and the cross-validation harness.

All three cases draw ``x1, x2, x3 ~ U(-1, 1)`` and are noiseless:

* case 1: ``x1^2 + log|x2| + 2 sin(pi/2 x3) [x2 >= 0] + 2 cos(pi/2 x3) [x2 < 0]``
* case 2: ``x1^2 + log|x2| + 2 g(x3)`` where ``g`` is ``sin(pi/2 x3)``,
  ``cos(pi/2 x3)``, ``sin(2 pi x3)`` or ``cos(2 pi x3)`` for the sign
  quadrants ``(+, +)``, ``(+, -)``, ``(-, +)``, ``(-, -)`` of ``(x1, x2)``
* case 3: ``x1^2 + log|x2| sin(pi/2 x3)``
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CalmModel, PipelineConfig, count_interactions, train_calm, train_gam
from .tabular import BINARY, Dataset, FeatureMeta, invert_target, kfold, transform_features

CASES = (1, 2, 3)
MODELS = ("teacher", "GAM", "CALM")


def case_target(case: int, X: np.ndarray) -> np.ndarray:
    x1, x2, x3 = np.asarray(X, dtype=float).T
    base = x1**2 + np.log(np.abs(x2))
    h = 0.5 * np.pi * x3
    if case == 1:
        return base + np.where(x2 >= 0, 2 * np.sin(h), 2 * np.cos(h))
    if case == 2:
        g = np.select(
            [(x1 >= 0) & (x2 >= 0), (x1 >= 0) & (x2 < 0), (x1 < 0) & (x2 >= 0)],
            [np.sin(h), np.cos(h), np.sin(4 * h)],
            np.cos(4 * h),
        )
        return base + 2 * g
    if case == 3:
        return x1**2 + np.log(np.abs(x2)) * np.sin(h)
    raise ValueError(f"unknown case {case!r}; expected one of {CASES}")


def gen_case(case: int, n: int = 1000, seed: int = 0) -> Dataset:
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {CASES}")
    if n < 1:
        raise ValueError("n must be at least 1")
    X = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, 3))
    schema = [FeatureMeta(f"x{i}") for i in (1, 2, 3)]
    return Dataset(schema, X, case_target(case, X))


def r2_score(y, p) -> float:
    y, p = np.asarray(y, dtype=float), np.asarray(p, dtype=float)
    sst = float(np.sum((y - y.mean()) ** 2))
    sse = float(np.sum((y - p) ** 2))
    return 1.0 - sse / sst if sst > 0 else (1.0 if sse == 0 else 0.0)


def rmse(y, p) -> float:
    return float(np.sqrt(np.mean((np.asarray(y, dtype=float) - np.asarray(p, dtype=float)) ** 2)))


def accuracy(y, prob) -> float:
    return float(np.mean((np.asarray(prob) >= 0.5) == (np.asarray(y) == 1.0)))


@dataclass
class MetricsRow:
    model: str
    metric: str
    mean: float
    std: float
    folds: int
    interactions: float | None = None
    wall_time: float = 0.0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be non-negative")


@dataclass
class FoldResult:
    index: int
    scores: dict[str, dict[str, float]]  # model -> metric -> value
    interactions: int
    times: dict[str, float] = field(default_factory=dict)
    calm: CalmModel | None = None
    gam: CalmModel | None = None


@dataclass
class CVResult:
    rows: list[MetricsRow]
    folds: list[FoldResult]

    def row(self, model: str, metric: str) -> MetricsRow:
        for r in self.rows:
            if r.model == model and r.metric == metric:
                return r
        raise KeyError((model, metric))


class FoldError(RuntimeError):
    pass


def _metrics(task: str, y, pred) -> dict[str, float]:
    if task == BINARY:
        return {"accuracy": accuracy(y, pred)}
    return {"r2": r2_score(y, pred), "rmse": rmse(y, pred)}


def run_fold(ds: Dataset, train, test, config: PipelineConfig, index: int = 0) -> FoldResult:
    dtr, dte = ds.subset(train), ds.subset(test)
    times = {}
    t0 = time.perf_counter()
    res = train_calm(dtr, config)
    times["CALM"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    gam = train_gam(dtr, config)
    times["GAM"] = time.perf_counter() - t0

    # the teacher is fitted inside train_calm on the scaled training split
    scaler = res.model.scaler
    raw = res.teacher.predict(transform_features(dte.X, scaler))
    teacher_pred = raw if ds.task == BINARY else invert_target(raw, scaler)
    scores = {
        "teacher": _metrics(ds.task, dte.y, teacher_pred),
        "GAM": _metrics(ds.task, dte.y, gam.predict(dte.X)),
        "CALM": _metrics(ds.task, dte.y, res.model.predict(dte.X)),
    }
    return FoldResult(index, scores, count_interactions(res.model), times, res.model, gam)


def _run_fold_job(args):
    ds, train, test, config, index = args
    try:
        return run_fold(ds, train, test, config, index)
    except Exception as exc:  # surfaced with the fold index by the caller
        raise FoldError(f"fold {index} failed: {exc}") from exc


def evaluate_cv(
    ds: Dataset,
    config: PipelineConfig | None = None,
    k: int = 5,
    seed: int = 0,
    jobs: int = 1,
) -> CVResult:
    """k-fold CV of the teacher, the GAM baseline and CALM.

    Metrics are computed on the raw target scale; ``std`` is the population
    standard deviation over folds. Folds run in ``jobs`` processes; results
    do not depend on ``jobs``.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    config = config or PipelineConfig()
    jobs_args = [(ds, tr, te, config, f) for f, (tr, te) in enumerate(kfold(ds.n, k, seed))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold_job, jobs_args))
    else:
        folds = [_run_fold_job(a) for a in jobs_args]

    rows = []
    metrics = list(folds[0].scores["CALM"])
    for name in MODELS:
        for metric in metrics:
            vals = np.array([f.scores[name][metric] for f in folds])
            inter = None
            if name == "CALM":
                inter = float(np.mean([f.interactions for f in folds]))
            elif name == "GAM":
                inter = 0.0
            wall = float(sum(f.times.get(name, 0.0) for f in folds))
            rows.append(MetricsRow(name, metric, float(vals.mean()), float(vals.std()), k, inter, wall))
    return CVResult(rows, folds)


CSV_FIELDS = ["case", "seed", "model", "metric", "mean", "std", "folds", "interactions"]


def rows_to_csv(rows: list[tuple[str, int, MetricsRow]], timing: bool = False) -> str:
    """Render ``(case label, seed, row)`` triples. Wall time is left out unless
    ``timing`` is set, so the default output is byte-reproducible."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS + (["wall_time"] if timing else []))
    for case, seed, r in rows:
        line = [case, seed, r.model, r.metric, repr(r.mean), repr(r.std), r.folds,
                "" if r.interactions is None else repr(r.interactions)]
        if timing:
            line.append(f"{r.wall_time:.3f}")
        w.writerow(line)
    return buf.getvalue()


def run_bench(
    cases,
    seeds,
    folds: int = 5,
    config: PipelineConfig | None = None,
    n: int = 1000,
    jobs: int = 1,
    model_dir=None,
) -> list[tuple[str, int, MetricsRow]]:
    """Generate each (case, seed) dataset, cross-validate it and optionally
    write every fold's CALM model to ``model_dir``."""
    out = []
    for case in cases:
        for seed in seeds:
            ds = gen_case(case, n, seed)
            res = evaluate_cv(ds, config, folds, seed, jobs)
            if model_dir is not None:
                d = Path(model_dir)
                d.mkdir(parents=True, exist_ok=True)
                for f in res.folds:
                    f.calm.save(d / f"case{case}_seed{seed}_fold{f.index}.json")
            out.extend((str(case), seed, r) for r in res.rows)
    return out
