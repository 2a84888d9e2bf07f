"""Command-line entry points for the whole pipeline.

Exit codes: 0 success, 1 usage error, 2 runtime failure (message on
stderr). Every stage reads and writes plain files, so runs compose:
sweep -> dataset -> train -> eval/validate/explain, with simulate and
serve as standalone endpoints.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as dataset_mod
from . import indices as indices_mod
from . import mlp, shapley, validation
from .engine import SimulationParams, simulate
from .rooms import RoomConfig, build_geometry, default_materials
from .service import MODELS_DIR_ENV, create_app


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sim_params(args, seed=0):
    return SimulationParams(
        ray_count=args.rays, cutoff_ms=args.cutoff_ms,
        image_source_order=args.order, rng_seed=seed,
        air_absorption=not args.no_air)


def _add_sim_flags(p):
    p.add_argument("--rays", type=int, default=10000)
    p.add_argument("--cutoff-ms", type=float, default=1000.0)
    p.add_argument("--order", type=int, default=2,
                   help="image source reflection order")
    p.add_argument("--no-air", action="store_true",
                   help="disable atmospheric absorption")


def build_parser():
    parser = _Parser(prog="roomsound",
                     description="room acoustics surrogate pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="simulate a config grid")
    p.add_argument("--grid", required=True,
                   help="training | validation | reduced | config list file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="journal directory")
    p.add_argument("--workers", type=int, default=os.cpu_count())
    _add_sim_flags(p)

    p = sub.add_parser("dataset", help="cut the seven model views")
    p.add_argument("--sweep", required=True, help="sweep journal directory")
    p.add_argument("--split", default="2624:292", help="train:test counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train one surrogate model")
    p.add_argument("--dataset", required=True,
                   help="dataset csv, or the directory holding the views")
    p.add_argument("--model", required=True,
                   choices=list(dataset_mod.MODEL_IDS))
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--dropout", type=float)

    p = sub.add_parser("eval", help="score a model on a dataset's test split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("validate", help="unseen-grid error report")
    p.add_argument("--models", required=True, help="trained model directory")
    p.add_argument("--out", required=True)
    p.add_argument("--sweep-dir",
                   help="validation sweep journal (default <models>/validation_sweep)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=os.cpu_count())
    _add_sim_flags(p)

    p = sub.add_parser("explain", help="Shapley attribution report")
    p.add_argument("--models", required=True)
    p.add_argument("--dataset", required=True,
                   help="directory holding the seven dataset views")
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="simulate one room config")
    p.add_argument("--config", required=True, help="flat JSON room document")
    p.add_argument("--seed", type=int, default=0)
    _add_sim_flags(p)

    p = sub.add_parser("serve", help="run the prediction service")
    p.add_argument("--models",
                   help=f"model directory (or ${MODELS_DIR_ENV})")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="static UI directory to mount")
    return parser


def _cmd_sweep(args):
    grid = args.grid
    configs = None
    if grid not in ("training", "validation", "reduced"):
        with open(grid) as fh:
            docs = json.load(fh)
        db = default_materials()
        configs = [RoomConfig.from_flat_dict(d, db) for d in docs]
        grid = os.path.basename(grid)
    params = _sim_params(args)

    def progress(done, total):
        print(f"\r{done}/{total} configs", end="", file=sys.stderr)

    store = dataset_mod.run_sweep(grid, params, args.out,
                                  base_seed=args.seed, workers=args.workers,
                                  configs=configs, progress=progress)
    print(file=sys.stderr)
    print(f"completed {len(store.completed())}/{len(store.configs)} configs")
    if store.failures():
        print(f"failures at indices {store.failures()}:")
        for i in store.failures():
            print(f"  {i}: {store.records[i]['error']}")
    return 0


def _cmd_dataset(args):
    try:
        train_n, test_n = (int(v) for v in args.split.split(":"))
    except ValueError:
        raise UsageError(f"--split wants TRAIN:TEST, got {args.split!r}")
    store = dataset_mod.load_sweep(None, args.sweep)
    n = len(store.completed())
    if train_n + test_n != n:
        raise UsageError(
            f"--split {args.split} does not partition the {n} swept configs")
    datasets = dataset_mod.build_all_datasets(store, train_n, test_n,
                                              args.seed)
    os.makedirs(args.out, exist_ok=True)
    for model_id, ds in datasets.items():
        path = os.path.join(args.out, f"dataset_{model_id}.csv")
        ds.save(path)
        print(f"{path}: {int(ds.train_mask.sum())} train / "
              f"{int((~ds.train_mask).sum())} test rows")
    return 0


def _dataset_path(arg, model_id):
    if os.path.isdir(arg):
        return os.path.join(arg, f"dataset_{model_id}.csv")
    return arg


def _cmd_train(args):
    ds = dataset_mod.Dataset.load(_dataset_path(args.dataset, args.model))
    if ds.model_id != args.model:
        raise UsageError(
            f"dataset is the {ds.model_id} view, not {args.model}")
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    if args.dropout is not None:
        overrides["dropout_rate"] = args.dropout

    def progress(epoch, total, history):
        if epoch % 10 == 0 or epoch == total:
            test = (f" test {history['test_mse'][-1]:.6f}"
                    if history["test_mse"] else "")
            print(f"\repoch {epoch}/{total} train "
                  f"{history['train_mse'][-1]:.6f}{test}", end="",
                  file=sys.stderr)

    model = mlp.fit_dataset(ds, progress=progress, **overrides)
    print(file=sys.stderr)
    mlp.save(model, args.out)
    x_test, y_test = ds.test_arrays()
    print(mlp.evaluate(model, x_test, y_test).to_text())
    print(f"saved {args.out}")
    return 0


def _cmd_eval(args):
    model = mlp.load(args.model)
    model_id = model.metadata.get("model_id", "sti")
    ds = dataset_mod.Dataset.load(_dataset_path(args.dataset, model_id))
    x_test, y_test = ds.test_arrays()
    print(mlp.evaluate(model, x_test, y_test).to_text())
    return 0


def _load_models(models_dir):
    models = {}
    for model_id in dataset_mod.MODEL_IDS:
        path = os.path.join(models_dir, f"model_{model_id}.json")
        if not os.path.exists(path):
            raise UsageError(f"missing model file {path}")
        models[model_id] = mlp.load(path)
    return models


def _cmd_validate(args):
    models = _load_models(args.models)
    sweep_dir = args.sweep_dir or os.path.join(args.models,
                                               "validation_sweep")
    params = _sim_params(args)
    store = dataset_mod.run_sweep("validation", params, sweep_dir,
                                  base_seed=args.seed, workers=args.workers)
    report = validation.run_validation(models, store)
    spans = validation.target_spans(models)
    _, indicators = validation.percentage_error_summary(report, spans)
    report.save(args.out)
    print(report.to_text())
    print()
    print(f"{'indicator':<8} {'test %':>8} {'unseen %':>9}")
    for kind, row in indicators.items():
        print(f"{kind:<8} {row['test_pct']:>8.2f} {row['unseen_pct']:>9.2f}")
    print(f"saved {args.out}")
    return 0


def _cmd_explain(args):
    models = _load_models(args.models)
    datasets = {m: dataset_mod.Dataset.load(_dataset_path(args.dataset, m))
                for m in dataset_mod.MODEL_IDS}
    report = shapley.aggregate(models, datasets)
    with open(args.out, "w") as fh:
        json.dump({"format": "roomsound-shapley", "version": 1,
                   "overall": report.overall,
                   "records": report.long_records()}, fh, indent=1)
    print(report.to_text())
    print(f"saved {args.out}")
    return 0


def _cmd_simulate(args):
    with open(args.config) as fh:
        doc = json.load(fh)
    config = RoomConfig.from_flat_dict(doc)
    params = _sim_params(args, seed=args.seed)
    geo = build_geometry(config)
    response = simulate(geo, params)
    acc = indices_mod.compute_all(response, geo)
    print(f"{'':>10}" + "".join(f"{b:>9}" for b in indices_mod.BANDS_HZ))
    for label, values in (("t30_s", acc.t30), ("edt_s", acc.edt),
                          ("c80_db", acc.c80), ("d50", acc.d50),
                          ("sabine_s", acc.sabine), ("eyring_s", acc.eyring)):
        print(f"{label:>10}" + "".join(f"{v:>9.3f}" for v in values))
    print(f"{'sti':>10}{acc.sti:>9.3f}")
    flags = set(acc.t30_quality)
    if flags != {"t30"}:
        print(f"# t30 fit quality: {list(acc.t30_quality)}")
    return 0


def _cmd_serve(args):
    import uvicorn
    models_dir = args.models or os.environ.get(MODELS_DIR_ENV)
    if not models_dir:
        raise UsageError(f"--models or ${MODELS_DIR_ENV} required")
    app = create_app(models_dir, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "sweep": _cmd_sweep, "dataset": _cmd_dataset, "train": _cmd_train,
    "eval": _cmd_eval, "validate": _cmd_validate, "explain": _cmd_explain,
    "simulate": _cmd_simulate, "serve": _cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
