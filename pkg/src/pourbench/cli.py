"""Command-line pipeline: collect -> train -> eval-offline / eval-loop -> report.

Every command takes --config/--out/--seed and is fully reproducible from its
run manifest. Exit codes: 0 ok, 2 configuration error, 3 runtime abort,
4 I/O failure; failures also emit a machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataset, estimator, evalkit
from .config import ConfigError
from .dataset import TrialRunner

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


class _OraclePredictor:
    """Reads the logged ground truth back; used to sanity-check the plumbing."""

    kind = "oracle"

    def predict_rows(self, rows):
        return np.atleast_2d(np.asarray(rows, dtype=float))[:, dataset.COL_GT].copy()


def _write_run_manifest(out_dir: Path, stage: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "stage": stage,
        "config": str(args.config) if getattr(args, "config", None) else None,
        "out": str(out_dir),
        "seed": getattr(args, "seed", None),
    }
    for extra in ("kind", "n_trials", "split", "epochs", "model", "grid", "jobs"):
        if getattr(args, extra.replace("-", "_"), None) is not None:
            manifest[extra] = getattr(args, extra.replace("-", "_"))
    tmp = out_dir / "run_manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    tmp.replace(out_dir / "run_manifest.json")


def _collect_worker(args):
    runner, trial, out_dir, trial_id = args
    log = runner.run(trial, feedback="plate")
    return dataset.save_trial(log, out_dir, trial_id)


def cmd_collect(args) -> int:
    cfg = config_mod.load_config(args.config)
    runner = TrialRunner(cfg)
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "collect", args)
    counts = tuple(int(c) for c in args.split.split(","))
    if len(counts) != 3:
        raise ConfigError("--split", "expected three comma-separated counts")
    if args.n_trials < sum(counts):
        raise ValueError(f"cannot split {args.n_trials} trials into {counts}; "
                         f"need at least {sum(counts)}")
    rng = np.random.default_rng(args.seed)
    trials = [dataset.sample_config(rng, cfg["trial"], runner.default_location)
              for _ in range(args.n_trials)]
    tasks = [(runner, trial, out_dir, i) for i, trial in enumerate(trials)]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(_collect_worker, tasks))
    else:
        entries = [_collect_worker(t) for t in tasks]
    entries.sort(key=lambda e: e["id"])
    train_ids, val_ids, test_ids = dataset.split_trials(
        [e["id"] for e in entries], counts=counts, seed=args.seed)
    dataset.write_manifest(out_dir, entries,
                           {"train": train_ids, "val": val_ids, "test": test_ids},
                           seed=args.seed)
    print(f"collected {len(entries)} trials into {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    splits = dataset.load_split_logs(args.data)
    spec = estimator.EstimatorSpec(args.kind)
    train_cfg = estimator.TrainConfig()
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    result = estimator.train(splits["train"], splits["val"], spec, train_cfg,
                             seed=args.seed, verbose=args.verbose)
    model = result.final if args.final else result.best
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    curves = {"train_mse": result.train_curve, "val_mse": result.val_curve,
              "best_val_mse": result.best_val_mse}
    with open(out.with_suffix(".curves.json"), "w") as fh:
        json.dump(curves, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {args.kind}: final train MSE {result.train_curve[-1]:.6f}, "
          f"best val MSE {result.best_val_mse:.6f} -> {out}")
    return EXIT_OK


def _resolve_predictor(spec: str):
    if spec == estimator.ANALYTICAL_FZ:
        return estimator.AnalyticalFz(), estimator.ANALYTICAL_FZ
    if spec == "oracle":
        return _OraclePredictor(), "oracle"
    model = estimator.Model.load(spec)
    return model, model.spec.kind


def cmd_eval_offline(args) -> int:
    splits = dataset.load_split_logs(args.data)
    predictor, label = _resolve_predictor(args.model)
    mse = estimator.evaluate_mse(predictor, splits["test"])
    payload = {"estimator": label, "test_mse_n2": mse,
               "n_trials": len(splits["test"]),
               "n_frames": int(sum(log.frames.shape[0] for log in splits["test"]))}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{label}: test MSE {mse:.6f} N^2 over {payload['n_frames']} frames")
    return EXIT_OK


def _load_grid(path: str | None):
    if path is None:
        return evalkit.EVAL_GRID
    with open(path) as fh:
        rows = json.load(fh)
    grid = []
    for i, row in enumerate(rows):
        if len(row) == 4:
            grid.append(tuple(row))
        elif len(row) == 3:
            grid.append((i + 1, *row))
        else:
            raise ConfigError(f"grid[{i}]", "expected [speed, source, target]")
    return tuple(grid)


def cmd_eval_loop(args) -> int:
    cfg = config_mod.load_config(args.config)
    runner = TrialRunner(cfg)
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "eval-loop", args)
    if args.model in ("gt", "plate"):
        predictor, label = args.model, args.model
        traceable = None
    else:
        predictor, label = _resolve_predictor(args.model)
        traceable = predictor
    grid = _load_grid(args.grid)
    records, summary, logs = evalkit.eval_grid(
        runner, predictor, label, seed=args.seed, grid=grid, jobs=args.jobs,
        keep_logs=True)
    variants = None
    if args.sweep:
        variants = evalkit.generalization_sweep(runner, predictor, label,
                                                seed=args.seed, jobs=args.jobs)
    payload = evalkit.report_payload(records, summary, variants)
    tables = evalkit.format_accuracy_table(records, {label: summary})
    traces = {}
    if traceable is not None:
        for rec, log in zip(records, logs):
            traces[f"{label}_T{rec.trial_id:02d}"] = evalkit.prediction_trace(log, traceable)
    evalkit.write_report(out_dir, payload, tables, traces)
    print(tables)
    print(f"report written to {out_dir / 'report.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.report) as fh:
        payload = json.load(fh)
    summary = payload.get("summary", {})
    print(json.dumps(payload, indent=2, sort_keys=True) if args.json else
          f"grid: {len(payload.get('grid', []))} trials | "
          f"avg {summary.get('avg_ml', 0):.2f} ml | rmse {summary.get('rmse_ml', 0):.2f} ml | "
          f"std {summary.get('std_ml', 0):.2f} ml")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pourbench",
                                     description="pouring simulation and estimation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run pouring trials and build the dataset")
    p.add_argument("--config", default=None, help="JSON config overriding the defaults")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-trials", type=int, default=250)
    p.add_argument("--split", default="210,20,20",
                   help="train,val,test trial counts")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train an estimator on a collected dataset")
    p.add_argument("--data", required=True, help="directory written by collect")
    p.add_argument("--kind", required=True, choices=sorted(estimator.KIND_DIMS))
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None, help="override the schedule length")
    p.add_argument("--final", action="store_true",
                   help="save the final weights instead of the best-validation checkpoint")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-offline", help="test-set MSE of a model or baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True,
                   help="model JSON path, 'analytical_fz' or 'oracle'")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_eval_offline)

    p = sub.add_parser("eval-loop", help="closed-loop accuracy grid")
    p.add_argument("--config", default=None)
    p.add_argument("--model", required=True,
                   help="model JSON path, 'analytical_fz', 'gt' or 'plate'")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", default=None, help="JSON file with grid rows")
    p.add_argument("--sweep", action="store_true",
                   help="also run the novel-location / novel-grasp sweep")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval_loop)

    p = sub.add_parser("report", help="print a report.json summary")
    p.add_argument("--report", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "path": exc.path, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as exc:
        print(json.dumps({"error": "runtime", "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
