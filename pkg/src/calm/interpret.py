"""Interpretability queries on a fitted :class:`~calm.model.CalmModel`.

* local contributions: the exact additive decomposition of one score;
* vertical lines: thresholds on feature ``i`` used by other features'
  partition trees, each with the empirical range ``[alpha, beta]`` of the
  score jump it causes on the training rows;
* regional sensitivity: the score change for a move ``x_i -> x_i + dx``;
* monotonicity audit: curves non-decreasing and every jump non-negative;
* plot specs and a small deterministic SVG renderer.

All quantities are on the score scale (before the link).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CalmModel
from .partition import GE, LT
from .tabular import Dataset

UP, DOWN, BOTH = "up", "down", "both"
EXACT_SET, INTERVAL = "exact_set", "interval"
INCREASING, DECREASING = "increasing", "decreasing"
DELTA_REL = 1e-9


@dataclass
class ContributionVector:
    beta0: float
    regions: np.ndarray
    values: np.ndarray
    names: list[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        s = self.beta0
        for v in self.values:
            s = s + float(v)
        return s

    def to_dict(self) -> dict:
        return {
            "beta0": float(self.beta0),
            "contributions": [
                {"feature": n, "region": int(r), "value": float(v)}
                for n, r, v in zip(self.names, self.regions, self.values)
            ],
            "score": self.total,
        }


def local_contributions(model: CalmModel, row) -> ContributionVector:
    """``f_i^(r_i(x_-i))(x_i)`` for every feature; ``beta0`` plus the values
    summed left to right equals ``model.score(row)`` exactly."""
    x = np.asarray(row, dtype=float).reshape(1, -1)
    return ContributionVector(
        model.beta0, model.regions(x)[0], model.contributions(x)[0], [m.name for m in model.schema]
    )


def arrow(alpha: float, beta: float) -> str:
    if alpha >= 0 and beta > 0:
        return UP
    if beta <= 0 and alpha < 0:
        return DOWN
    return BOTH


@dataclass
class VLine:
    """A hidden jump of feature ``feature`` at ``threshold``.

    ``sources`` are the features whose partition trees split on it.
    """

    feature: int
    threshold: float
    sources: tuple[int, ...]
    alpha: float
    beta: float
    affected: int = 0

    @property
    def arrow(self) -> str:
        return arrow(self.alpha, self.beta)

    def to_dict(self) -> dict:
        return {
            "threshold": float(self.threshold),
            "sources": list(self.sources),
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "arrow": self.arrow,
            "affected": self.affected,
        }

    @classmethod
    def from_dict(cls, d: dict, feature: int) -> "VLine":
        return cls(feature, d["threshold"], tuple(d["sources"]), d["alpha"], d["beta"], d.get("affected", 0))


def _numerical(model: CalmModel, i: int) -> None:
    if not 0 <= i < model.d:
        raise ValueError(f"feature index {i} out of range for {model.d} features")
    if model.schema[i].is_categorical:
        raise ValueError(f"feature {model.schema[i].name!r} is categorical; the query needs an ordered feature")


def _straddle(tau: float, span: float) -> tuple[float, float]:
    delta = DELTA_REL * span
    lo, hi = tau - delta, tau + delta
    if not lo < tau:
        lo = np.nextafter(tau, -np.inf)
    if not hi > tau:
        hi = np.nextafter(tau, np.inf)
    return lo, hi


def jump_at(model: CalmModel, X, i: int, tau: float, span: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row jump of the other features' contributions when ``x_i`` moves
    from just below ``tau`` to just above it, and the mask of rows where any
    region changes."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lo, hi = _straddle(tau, span)
    Xa, Xb = X.copy(), X.copy()
    Xa[:, i], Xb[:, i] = lo, hi
    ra, rb = model.regions(Xa), model.regions(Xb)
    others = np.arange(model.d) != i
    changed = np.any(ra[:, others] != rb[:, others], axis=1)
    ca = model.shapes.contributions(Xa, ra)
    cb = model.shapes.contributions(Xb, rb)
    jump = np.sum((cb - ca)[:, others], axis=1)
    return np.where(changed, jump, 0.0), changed


def vlines_for(model: CalmModel, ds: Dataset | None, i: int) -> list[VLine]:
    """One record per threshold on feature ``i`` in any other partition tree.

    ``[alpha, beta]`` is the min/max jump over the rows of ``ds`` whose
    regions change at the threshold, or ``[0, 0]`` when no row is affected.
    With ``ds=None`` the records stored in the model at training time are
    returned.
    """
    _numerical(model, i)
    if ds is None:
        if i not in model.jumps:
            raise ValueError(f"model stores no jump records for feature {i}; pass the training data")
        return [VLine.from_dict(v, i) for v in model.jumps[i]]
    sources: dict[float, set[int]] = {}
    for j, tree in enumerate(model.partitions.trees):
        if j == i:
            continue
        for node in tree.internal_nodes():
            if node.rule.feature == i and node.rule.op in (LT, GE):
                sources.setdefault(float(node.rule.threshold), set()).add(j)
    x = ds.X[:, i]
    span = float(x.max() - x.min()) if ds.n else 1.0
    span = span if span > 0 else 1.0
    out = []
    for tau in sorted(sources):
        jump, changed = jump_at(model, ds.X, i, tau, span)
        if changed.any():
            a, b = float(jump[changed].min()), float(jump[changed].max())
        else:
            a = b = 0.0
        out.append(VLine(i, tau, tuple(sorted(sources[tau])), a, b, int(changed.sum())))
    return out


@dataclass
class SensitivityAnswer:
    kind: str
    feature: int
    dx: float
    region: int
    delta_f: float  # change of the row's own region curve
    exact: dict[int, float] = field(default_factory=dict)  # region -> delta f
    low: float = 0.0
    high: float = 0.0
    crossed: list[VLine] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "feature": self.feature, "dx": self.dx, "region": self.region,
               "delta_f": self.delta_f}
        if self.kind == EXACT_SET:
            out["exact"] = {str(r): v for r, v in self.exact.items()}
        else:
            out["interval"] = [self.low, self.high]
            out["crossed"] = [v.to_dict() for v in self.crossed]
        return out


def regional_sensitivity(model: CalmModel, ds: Dataset | None, row, i: int, dx: float, lines: list[VLine] | None = None) -> SensitivityAnswer:
    """Score change for moving ``x_i`` to ``x_i + dx``.

    If no vertical line lies in ``(x_i, x_i + dx]`` the change is exactly the
    curve difference; the answer lists it for every region of feature ``i``.
    Otherwise the answer is ``[df + sum alpha, df + sum beta]`` over the
    crossed lines, where ``df`` uses the row's own region.
    """
    _numerical(model, i)
    if not dx > 0:
        raise ValueError("dx must be positive")
    x = np.asarray(row, dtype=float).reshape(-1)
    a, b = x[i], x[i] + dx
    region = int(model.regions(x[None, :])[0, i])
    per = model.shapes.shapes[i]
    diffs = {sf.region: float(sf(np.array([b]))[0] - sf(np.array([a]))[0]) for sf in per}
    df = diffs[region]
    lines = vlines_for(model, ds, i) if lines is None else lines
    crossed = [v for v in lines if a < v.threshold <= b]
    if not crossed:
        return SensitivityAnswer(EXACT_SET, i, float(dx), region, df, diffs)
    lo = df + sum(v.alpha for v in crossed)
    hi = df + sum(v.beta for v in crossed)
    return SensitivityAnswer(INTERVAL, i, float(dx), region, df, {}, lo, hi, crossed)


@dataclass
class CurveFailure:
    feature: int
    region: int
    bin: int  # values[bin + 1] breaks the direction against values[bin]
    breakpoint: float


@dataclass
class Witness:
    row: int
    x_from: float
    x_to: float
    score_from: float
    score_to: float


@dataclass
class MonotonicityVerdict:
    feature: int
    direction: str
    monotone: bool
    failing_curves: list[CurveFailure] = field(default_factory=list)
    failing_jumps: list[VLine] = field(default_factory=list)
    witness: Witness | None = None

    def line(self) -> str:
        return f"monotone: {'true' if self.monotone else 'false'}"


def _find_witness(model: CalmModel, X, i: int, pairs, sign: float) -> Witness | None:
    """First training row and move ``x_from -> x_to`` (with ``x_to > x_from``)
    whose score goes against the direction."""
    for row_idx, lo, hi in pairs:
        Xa, Xb = X[row_idx].copy(), X[row_idx].copy()
        Xa[:, i], Xb[:, i] = lo, hi
        sa, sb = model.score(Xa), model.score(Xb)
        bad = np.flatnonzero(sign * (sb - sa) < 0)
        if bad.size:
            k = int(bad[0])
            return Witness(int(row_idx[k]), float(lo), float(hi), float(sa[k]), float(sb[k]))
    return None


def check_monotonicity(model: CalmModel, ds: Dataset | None, i: int, direction: str = INCREASING) -> MonotonicityVerdict:
    """Sufficient check: every region curve of feature ``i`` is monotone in
    ``direction`` and every vertical line jumps that way (``alpha >= 0`` for
    increasing, ``beta <= 0`` for decreasing). On failure, the rows of ``ds``
    are searched for a concrete counterexample (skipped when ``ds`` is None).
    """
    _numerical(model, i)
    if direction not in (INCREASING, DECREASING):
        raise ValueError(f"direction must be {INCREASING!r} or {DECREASING!r}")
    sign = 1.0 if direction == INCREASING else -1.0
    curves = []
    for sf in model.shapes.shapes[i]:
        steps = sign * np.diff(sf.values)
        for k in np.flatnonzero(steps < 0):
            curves.append(CurveFailure(i, sf.region, int(k), float(sf.edges[k + 1])))
    lines = vlines_for(model, ds, i)
    jumps = [v for v in lines if (v.alpha < 0 if sign > 0 else v.beta > 0)]
    verdict = MonotonicityVerdict(i, direction, not curves and not jumps, curves, jumps)
    if verdict.monotone or ds is None:
        return verdict

    regions = model.regions(ds.X)[:, i]
    x = ds.X[:, i]
    span = float(x.max() - x.min()) or 1.0
    pairs = []
    for v in jumps:
        lo, hi = _straddle(v.threshold, span)
        pairs.append((np.arange(ds.n), lo, hi))
    for c in curves:
        sf = model.shapes.shape(i, c.region)
        rows = np.flatnonzero(regions == c.region)
        lo = float(sf.edges[c.bin]) if c.bin > 0 else float(sf.edges[0])
        pairs.append((rows, lo, float(sf.edges[c.bin + 1])))
    verdict.witness = _find_witness(model, ds.X, i, pairs, sign)
    return verdict


@dataclass
class Curve:
    region: int
    label: str
    breakpoints: list[float]
    values: list[float]  # region level included


@dataclass
class PlotSpec:
    feature: int
    name: str
    curves: list[Curve]
    vlines: list[VLine]
    categories: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "name": self.name,
            "categories": list(self.categories),
            "curves": [
                {"region": c.region, "label": c.label, "breakpoints": c.breakpoints, "values": c.values}
                for c in self.curves
            ],
            "vlines": [v.to_dict() for v in self.vlines],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlotSpec":
        return cls(
            d["feature"],
            d["name"],
            [Curve(c["region"], c["label"], list(c["breakpoints"]), list(c["values"])) for c in d["curves"]],
            [VLine.from_dict(v, d["feature"]) for v in d["vlines"]],
            list(d.get("categories", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PlotSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def plot_spec(model: CalmModel, ds: Dataset | None, i: int) -> PlotSpec:
    """Curves per region (labelled by their rule conjunction) and, for
    numerical features, the vertical lines with their jump ranges."""
    if not 0 <= i < model.d:
        raise ValueError(f"feature index {i} out of range for {model.d} features")
    meta = model.schema[i]
    tree = model.partitions.trees[i]
    curves = [
        Curve(sf.region, tree.region_label(sf.region, model.schema),
              [float(v) for v in sf.edges], [float(v) for v in sf.full_values()])
        for sf in model.shapes.shapes[i]
    ]
    lines = [] if meta.is_categorical else vlines_for(model, ds, i)
    return PlotSpec(i, meta.name, curves, lines, list(meta.categories))


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
_ARROW = {UP: "↑", DOWN: "↓", BOTH: "↕"}


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def render_svg(spec: PlotSpec, path=None, width: int = 640, height: int = 400) -> str:
    """Draw the plot spec as a standalone SVG; output depends only on
    ``spec`` (fixed number formatting, no timestamps or random ids)."""
    ml, mr, mt, mb = 60, 20, 20, 50 + 16 * len(spec.curves)
    pw, ph = width - ml - mr, height - mt - mb
    if ph < 40:
        height += 40 - ph
        ph = 40
    categorical = bool(spec.categories)

    xs, ys = [], []
    for c in spec.curves:
        xs += c.breakpoints
        ys += c.values
    xs += [v.threshold for v in spec.vlines]
    if categorical:
        x0, x1 = -0.5, max(len(spec.categories) - 0.5, 0.5)
    else:
        x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x0 + 0.5
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y0 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    f = "{:.2f}".format
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{ml - 4}" y="{f(py(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')
    if categorical:
        for k, name in enumerate(spec.categories):
            out.append(f'<text x="{f(px(k))}" y="{mt + ph + 14}" text-anchor="middle">{_esc(name)}</text>')
    else:
        for k in range(5):
            xv = x0 + (x1 - x0) * k / 4
            out.append(f'<text x="{f(px(xv))}" y="{mt + ph + 14}" text-anchor="middle">{xv:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{mt + ph + 30}" text-anchor="middle">{_esc(spec.name)}</text>')

    for k, c in enumerate(spec.curves):
        color = _COLORS[k % len(_COLORS)]
        pts = []
        if categorical:
            for code, v in zip(c.breakpoints, c.values):
                out.append(f'<circle cx="{f(px(code))}" cy="{f(py(v))}" r="3" fill="{color}"/>')
        else:
            for b in range(len(c.values)):
                pts.append(f"{f(px(c.breakpoints[b]))},{f(py(c.values[b]))}")
                pts.append(f"{f(px(c.breakpoints[b + 1]))},{f(py(c.values[b]))}")
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        ly = mt + ph + 44 + 16 * k
        out.append(f'<line x1="{ml}" y1="{ly - 4}" x2="{ml + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + 26}" y="{ly}">{_esc(c.label)}</text>')

    for v in spec.vlines:
        x = f(px(v.threshold))
        out.append(f'<line x1="{x}" y1="{mt}" x2="{x}" y2="{mt + ph}" stroke="#555" stroke-dasharray="3,3"/>')
        label = f"{_ARROW[v.arrow]} [{v.alpha:.3g}, {v.beta:.3g}]"
        out.append(f'<text x="{x}" y="{mt + 12}" text-anchor="middle">{_esc(label)}</text>')
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(svg, encoding="utf-8")
    return svg
