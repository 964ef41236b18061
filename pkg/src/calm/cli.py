"""Command line interface: ``calm {train,predict,evaluate,explain,plot,bench}``.

Features are named on the command line either by column name or by 1-based
index. Exit status is 0 on success, 2 on a usage error and 1 when the
command itself fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import CASES, accuracy, evaluate_cv, r2_score, rmse, rows_to_csv, run_bench
from .effects import dump_effects
from .fitting import BOOST, EXACT, FitConfig
from .gbdt import GbdtConfig
from .interpret import (
    INCREASING, DECREASING, check_monotonicity, local_contributions, plot_spec,
    regional_sensitivity, render_svg, vlines_for,
)
from .model import CalmModel, PipelineConfig, train_calm
from .partition import PartitionParams
from .tabular import BINARY, encode_row, load_csv, load_rows

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SHOW = 5  # failing curve bins listed by explain --monotone


class UsageError(Exception):
    pass


def _k_value(text: str) -> float:
    if text.lower() in ("inf", "none", "unconstrained"):
        return math.inf
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"K must be a non-negative integer or 'inf', got {text!r}")
    if k < 0:
        raise argparse.ArgumentTypeError("K must be non-negative")
    return float(k)


def _default_seed() -> int:
    env = os.environ.get("CALM_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"CALM_SEED must be an integer, got {env!r}")


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--dmax", type=int, default=2, help="partition tree depth limit (default 2)")
    g.add_argument("--eps", type=float, default=0.2, help="minimum relative heterogeneity drop (default 0.2)")
    g.add_argument("--grid", type=int, default=20, help="grid size M for local effects (default 20)")
    g.add_argument("--thresholds", type=int, default=21, help="candidate thresholds T per feature (default 21)")
    g.add_argument("--min-leaf", type=int, default=None, help="rows per partition region (default max(20, 5%% of N))")
    g.add_argument("--k", type=_k_value, default=math.inf, help="keep the top-K splits over all trees (default inf)")
    g.add_argument("--mode", choices=("boost", "exact"), default="boost", help="shape fitting mode (default boost)")
    g.add_argument("--rounds", type=int, default=500, help="boosting rounds for the shapes (default 500)")
    g.add_argument("--lr", type=float, default=0.1, help="shape learning rate (default 0.1)")
    g.add_argument("--bins", type=int, default=64, help="maximum bins per shape (default 64)")
    g.add_argument("--sweeps", type=int, default=20, help="backfitting sweeps in exact mode (default 20)")
    g.add_argument("--tolerance", type=float, default=1e-8, help="exact-mode stopping tolerance (default 1e-8)")
    g.add_argument("--teacher-rounds", type=int, default=300, help="teacher boosting rounds (default 300)")
    g.add_argument("--seed", type=int, default=None, help="random seed (default: $CALM_SEED or 0)")


def _config(args) -> PipelineConfig:
    for name in ("dmax", "grid", "thresholds", "rounds", "bins", "sweeps", "teacher_rounds"):
        if getattr(args, name) < (0 if name == "dmax" else 1):
            raise UsageError(f"--{name.replace('_', '-')} is out of range")
    return PipelineConfig(
        teacher=GbdtConfig(rounds=args.teacher_rounds),
        grid=args.grid,
        partition=PartitionParams(d_max=args.dmax, eps=args.eps, T=args.thresholds, min_leaf=args.min_leaf, K=args.k),
        fit=FitConfig(rounds=args.rounds, learning_rate=args.lr, bins=args.bins,
                      mode=EXACT if args.mode == "exact" else BOOST, sweeps=args.sweeps, tolerance=args.tolerance),
    )


def _feature(model: CalmModel, text: str) -> int:
    names = [m.name for m in model.schema]
    if text in names:
        return names.index(text)
    try:
        k = int(text)
    except ValueError:
        raise UsageError(f"unknown feature {text!r}; expected a name in {names} or a 1-based index")
    if not 1 <= k <= len(names):
        raise UsageError(f"feature index {k} out of range 1..{len(names)}")
    return k - 1


def _data(model: CalmModel, path):
    if path is None:
        return None
    return load_csv(path, schema=model.schema, target=None, task=model.task)


def _write_csv(path, header, rows) -> None:
    out = sys.stdout if path in (None, "-") else Path(path).open("w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_train(args) -> int:
    config = _config(args)
    seed = _default_seed() if args.seed is None else args.seed
    ds = load_csv(args.input, target=args.target)
    res = train_calm(ds, config)
    model = res.model
    model.meta["seed"] = seed
    model.save(args.out)
    if args.trace:
        _write_csv(args.trace, ["step", "loss"], [[k, repr(v)] for k, v in enumerate(res.fit.loss_trace)])
    for text in args.dump_effects or []:
        i = _feature(model, text)
        if i not in res.matrices:
            raise UsageError(f"feature {model.schema[i].name!r} has no effects matrix")
        dump_effects(res.matrices[i], Path(args.out).with_name(f"{Path(args.out).stem}.effects.{model.schema[i].name}.csv"))
    pred = model.predict(ds.X)
    print(f"trained CALM on {ds.n} rows, {ds.d} features ({ds.task})")
    for tree in model.partitions.trees:
        print(f"  {model.schema[tree.owner].name}: {tree.n_regions} region(s)")
    print(f"interactions: {model.n_interactions}")
    if ds.task == BINARY:
        print(f"train accuracy: {accuracy(ds.y, pred):.4f}")
    else:
        print(f"train R2: {r2_score(ds.y, pred):.4f}  RMSE: {rmse(ds.y, pred):.4g}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = CalmModel.load(args.model)
    X = load_rows(args.input, model.schema)
    pred = model.predict(X)
    header = ["probability" if model.task == BINARY else "prediction"]
    rows = [[repr(float(p))] for p in pred]
    if args.score:
        header.append("score")
        rows = [r + [repr(float(s))] for r, s in zip(rows, model.score(X))]
    _write_csv(args.output, header, rows)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.model:
        model = CalmModel.load(args.model)
        ds = load_csv(args.input, schema=model.schema, target=args.target, task=model.task)
        pred = model.predict(ds.X)
        if model.task == BINARY:
            print(f"accuracy: {accuracy(ds.y, pred):.6f}")
        else:
            print(f"r2: {r2_score(ds.y, pred):.6f}")
            print(f"rmse: {rmse(ds.y, pred):.6g}")
        return EXIT_OK
    seed = _default_seed() if args.seed is None else args.seed
    ds = load_csv(args.input, target=args.target)
    res = evaluate_cv(ds, _config(args), args.folds, seed, args.jobs)
    text = rows_to_csv([(Path(args.input).name, seed, r) for r in res.rows], args.timing)
    _emit(text, args.out)
    return EXIT_OK


def _emit(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _read_row(model: CalmModel, text: str) -> np.ndarray:
    p = Path(text)
    raw = p.read_text(encoding="utf-8") if p.exists() else text
    try:
        values = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"row must be a JSON object or list (or a file holding one): {exc.msg}")
    if not isinstance(values, (dict, list)):
        raise UsageError("row must be a JSON object or list")
    return encode_row(values, model.schema, where="row")


def cmd_explain(args) -> int:
    model = CalmModel.load(args.model)
    ds = _data(model, args.data)
    if args.regions:
        for tree in model.partitions.trees:
            print(tree.to_text(model.schema))
        if args.json:
            _emit(json.dumps(model.partitions.to_dict(), indent=1) + "\n", args.json)
    if args.contrib:
        cv = local_contributions(model, _read_row(model, args.contrib))
        print(json.dumps(cv.to_dict(), indent=1))
    if args.sensitivity:
        i = _feature(model, args.sensitivity[0])
        try:
            dx = float(args.sensitivity[1])
        except ValueError:
            raise UsageError(f"dx must be a number, got {args.sensitivity[1]!r}")
        if args.row is None:
            raise UsageError("--sensitivity needs --row")
        ans = regional_sensitivity(model, ds, _read_row(model, args.row), i, dx)
        print(json.dumps(ans.to_dict(), indent=1))
    if args.monotone:
        i = _feature(model, args.monotone)
        v = check_monotonicity(model, ds, i, args.direction)
        print(v.line())
        for c in v.failing_curves[:SHOW]:
            print(f"  curve region {c.region}: breaks at bin {c.bin} (x = {c.breakpoint:.6g})")
        if len(v.failing_curves) > SHOW:
            print(f"  ... {len(v.failing_curves) - SHOW} more curve breaks")
        for j in v.failing_jumps:
            print(f"  jump at {j.threshold:.6g}: [{j.alpha:.6g}, {j.beta:.6g}] arrow {j.arrow}")
        if v.witness is not None:
            w = v.witness
            print(f"  witness: row {w.row}, x {w.x_from:.6g} -> {w.x_to:.6g}, score {w.score_from:.6g} -> {w.score_to:.6g}")
    if args.vlines:
        i = _feature(model, args.vlines)
        for v in vlines_for(model, ds, i):
            print(json.dumps(v.to_dict()))
    return EXIT_OK


def cmd_plot(args) -> int:
    model = CalmModel.load(args.model)
    i = _feature(model, args.feature)
    spec = plot_spec(model, _data(model, args.data), i)
    if args.json:
        spec.save(args.json)
    svg = render_svg(spec)
    if args.svg:
        _emit(svg, args.svg)
    elif not args.json:
        sys.stdout.write(svg)
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _config(args)
    seeds = args.seeds if args.seeds else [_default_seed() if args.seed is None else args.seed]
    cases = CASES if args.case == "all" else [int(args.case)]
    model_dir = args.models
    if model_dir is None and args.out not in (None, "-"):
        model_dir = Path(args.out).with_name(Path(args.out).stem + "_models")
    rows = run_bench(cases, seeds, args.folds, config, args.n, args.jobs, model_dir)
    _emit(rows_to_csv(rows, args.timing), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calm", description="Conditionally additive local models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="{train,predict,evaluate,explain,plot,bench}")

    t = sub.add_parser("train", help="fit a model on a CSV file")
    t.add_argument("--input", required=True, help="training CSV (header row required)")
    t.add_argument("--out", required=True, help="model JSON to write")
    t.add_argument("--target", default=None, help="target column (default: last column)")
    t.add_argument("--trace", default=None, help="write the per-round training loss to this CSV")
    t.add_argument("--dump-effects", action="append", metavar="FEATURE", help="dump the local-effects matrix of a feature")
    _pipeline_flags(t)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="score rows with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--input", required=True, help="CSV whose header names every model feature")
    pr.add_argument("--output", default=None, help="predictions CSV (default stdout)")
    pr.add_argument("--score", action="store_true", help="also write the pre-link score")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="test a saved model, or cross-validate the pipeline on a CSV")
    e.add_argument("--input", required=True)
    e.add_argument("--model", default=None, help="evaluate this model instead of running CV")
    e.add_argument("--target", default=None)
    e.add_argument("--folds", type=int, default=5)
    e.add_argument("--jobs", type=int, default=1, help="folds run in parallel processes (default 1)")
    e.add_argument("--out", default=None, help="metrics CSV (default stdout)")
    e.add_argument("--timing", action="store_true", help="add a wall_time column")
    _pipeline_flags(e)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("explain", help="interpretability queries on a saved model")
    x.add_argument("--model", required=True)
    x.add_argument("--data", default=None, help="training CSV for jump ranges (default: ranges stored in the model)")
    x.add_argument("--regions", action="store_true", help="print every partition tree")
    x.add_argument("--json", default=None, help="with --regions, also write the trees as JSON")
    x.add_argument("--contrib", metavar="ROW", help="per-feature contributions of a row (JSON or JSON file)")
    x.add_argument("--sensitivity", nargs=2, metavar=("FEATURE", "DX"), help="score change for x_i -> x_i + dx")
    x.add_argument("--row", default=None, help="row for --sensitivity (JSON or JSON file)")
    x.add_argument("--monotone", metavar="FEATURE", help="audit monotonicity of a feature")
    x.add_argument("--direction", choices=(INCREASING, DECREASING), default=INCREASING)
    x.add_argument("--vlines", metavar="FEATURE", help="list the hidden jumps of a feature")
    x.set_defaults(func=cmd_explain)

    pl = sub.add_parser("plot", help="plot spec and SVG for one feature")
    pl.add_argument("feature")
    pl.add_argument("--model", required=True)
    pl.add_argument("--data", default=None)
    pl.add_argument("--svg", default=None)
    pl.add_argument("--json", default=None)
    pl.set_defaults(func=cmd_plot)

    b = sub.add_parser("bench", help="cross-validate on the synthetic cases")
    b.add_argument("--case", choices=[str(c) for c in CASES] + ["all"], default="1")
    b.add_argument("--folds", type=int, default=5)
    b.add_argument("--seeds", type=int, nargs="+", default=None, help="several seeds (overrides --seed)")
    b.add_argument("--n", type=int, default=1000, help="rows per dataset (default 1000)")
    b.add_argument("--out", default=None, help="metrics CSV (default stdout)")
    b.add_argument("--models", default=None, help="directory for per-fold model files (default: next to --out)")
    b.add_argument("--jobs", type=int, default=1, help="folds run in parallel processes (default 1)")
    b.add_argument("--timing", action="store_true", help="add a wall_time column")
    _pipeline_flags(b)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command == "explain" and not (args.regions or args.contrib or args.sensitivity or args.monotone or args.vlines):
            raise UsageError("explain needs one of --regions, --contrib, --sensitivity, --monotone, --vlines")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"calm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"calm: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
