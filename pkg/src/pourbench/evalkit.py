"""Closed-loop evaluation: the 12-trial accuracy grid, aggregate metrics,
novel-location / novel-grasp sweeps and report generation.

The error convention is signed: positive means more liquid was poured than
the target. The spread statistic is the sample (n-1) standard deviation of
the signed errors.
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .arm_model import ML_TO_N
from .dataset import COL_GT, COL_T, TrialConfig, TrialLog, TrialRunner
from .estimator import ANALYTICAL_FZ, AnalyticalFz, Model

# (trial id, pour speed [ml/s], source volume [ml], target volume [ml])
EVAL_GRID = (
    (1, 15.0, 220.0, 120.0),
    (2, 45.0, 220.0, 120.0),
    (3, 80.0, 220.0, 120.0),
    (4, 15.0, 220.0, 180.0),
    (5, 45.0, 220.0, 180.0),
    (6, 80.0, 220.0, 180.0),
    (7, 15.0, 320.0, 150.0),
    (8, 45.0, 320.0, 150.0),
    (9, 80.0, 320.0, 150.0),
    (10, 15.0, 320.0, 260.0),
    (11, 45.0, 320.0, 260.0),
    (12, 80.0, 320.0, 260.0),
)


@dataclass
class AccuracyRecord:
    trial_id: int
    estimator: str
    target_ml: float
    poured_ml: float
    error_ml: float          # signed; positive = over-poured
    outcome: str


@dataclass
class MetricsSummary:
    avg_ml: float
    rmse_ml: float
    std_ml: float


def metrics_summary(errors) -> MetricsSummary:
    """Average, RMSE and sample standard deviation of signed errors [ml]."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        return MetricsSummary(avg_ml=0.0, rmse_ml=0.0, std_ml=0.0)
    avg = float(np.mean(e))
    rmse = float(np.sqrt(np.mean(e * e)))
    std = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    return MetricsSummary(avg_ml=avg, rmse_ml=rmse, std_ml=std)


def grid_trial_config(runner: TrialRunner, row, seed: int,
                      grasp_offset_mm: float = 0.0,
                      location=None) -> TrialConfig:
    """Translate one grid row (ml/s, ml) into controller units (N/s, N)."""
    _, speed_ml_s, source_ml, target_ml = row
    ctrl = runner.cfg["controller"]
    return TrialConfig(
        kp=ctrl["kp"], kd=ctrl["kd"],
        pour_rate_n_s=speed_ml_s * ML_TO_N,
        source_volume_ml=source_ml,
        target_weight_n=target_ml * ML_TO_N,
        grasp_offset_mm=grasp_offset_mm,
        pour_location=tuple(location if location is not None else runner.default_location),
        seed=seed)


def _resolve_feedback(predictor):
    if predictor in ("gt", "plate"):
        return predictor
    return predictor  # callable estimators pass through


def _run_row(runner: TrialRunner, row, predictor, label: str, seed: int,
             grasp_offset_mm: float, location) -> tuple[AccuracyRecord, TrialLog]:
    trial_id, _, _, target_ml = row
    trial = grid_trial_config(runner, row, seed=seed,
                              grasp_offset_mm=grasp_offset_mm, location=location)
    log = runner.run(trial, feedback=_resolve_feedback(predictor))
    poured = log.final_poured_ml
    rec = AccuracyRecord(trial_id=trial_id, estimator=label, target_ml=target_ml,
                         poured_ml=poured, error_ml=poured - target_ml,
                         outcome=log.outcome)
    return rec, log


def _row_worker(args):
    return _run_row(*args)


def eval_grid(runner: TrialRunner, predictor, label: str, seed: int = 0,
              grid=EVAL_GRID, grasp_offset_mm: float = 0.0, location=None,
              jobs: int = 1, keep_logs: bool = False):
    """Run the full accuracy grid with one estimator (or feedback mode).

    Per-trial aborts are recorded in the records, never raised. Returns
    (records, summary) and, with keep_logs, the trial logs for tracing.
    """
    seeds = [int(s.generate_state(1)[0] % (2**31 - 1))
             for s in np.random.SeedSequence(seed).spawn(len(grid))]
    tasks = [(runner, row, predictor, label, s, grasp_offset_mm, location)
             for row, s in zip(grid, seeds)]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_row_worker, tasks))
    else:
        results = [_run_row(*t) for t in tasks]
    records = [rec for rec, _ in results]
    logs = [log for _, log in results]
    summary = metrics_summary([r.error_ml for r in records])
    if keep_logs:
        return records, summary, logs
    return records, summary


def generalization_sweep(runner: TrialRunner, predictor, label: str,
                         seed: int = 0, jobs: int = 1):
    """Re-run the configured sweep trials at the novel locations and with the
    novel grasp offsets; returns a per-variant-class summary."""
    eval_cfg = runner.cfg["eval"]
    sweep_ids = set(eval_cfg["sweep_trials"])
    rows = [row for row in EVAL_GRID if row[0] in sweep_ids]

    location_records = []
    for i, pose_name in enumerate(eval_cfg["novel_location_poses"]):
        location = runner.cfg["poses"][pose_name]["location"]
        recs, _ = eval_grid(runner, predictor, label, seed=seed + 1000 + i,
                            grid=rows, location=location, jobs=jobs)
        location_records.extend(recs)

    grasp_records = []
    for i, offset in enumerate(eval_cfg["novel_grasp_offsets_mm"]):
        recs, _ = eval_grid(runner, predictor, label, seed=seed + 2000 + i,
                            grid=rows, grasp_offset_mm=offset, jobs=jobs)
        grasp_records.extend(recs)

    return {
        "novel_location": {
            "records": location_records,
            "summary": metrics_summary([r.error_ml for r in location_records]),
        },
        "novel_grasp": {
            "records": grasp_records,
            "summary": metrics_summary([r.error_ml for r in grasp_records]),
        },
    }


# ---------------------------------------------------------------------------
# report bundle

def prediction_trace(log: TrialLog, predictor) -> np.ndarray:
    """(t, gt, pred) columns for one trial, ready for external plotting."""
    preds = predictor.predict_rows(log.frames)
    return np.stack([log.frames[:, COL_T], log.frames[:, COL_GT], preds], axis=1)


def write_trace_csv(path: str | Path, trace: np.ndarray) -> None:
    np.savetxt(path, trace, fmt="%.6f", delimiter=",", header="t,gt,pred", comments="")


def report_payload(records: list[AccuracyRecord], summary: MetricsSummary,
                   variants: dict | None = None) -> dict:
    payload = {
        "grid": [asdict(r) for r in records],
        "summary": asdict(summary),
        "variants": {},
    }
    if variants:
        for name, entry in variants.items():
            payload["variants"][name] = asdict(entry["summary"])
    return payload


def format_accuracy_table(records: list[AccuracyRecord],
                          summaries: dict[str, MetricsSummary]) -> str:
    """Plain-text accuracy table, one row per estimator, columns T1..Tn."""
    by_est: dict[str, dict[int, AccuracyRecord]] = {}
    for rec in records:
        by_est.setdefault(rec.estimator, {})[rec.trial_id] = rec
    ids = sorted({r.trial_id for r in records})
    lines = []
    header = ["Estimator"] + [f"T{i}" for i in ids] + ["Avg", "RMSE", "StdDev"]
    lines.append("  ".join(f"{h:>9}" for h in header))
    for est, recs in by_est.items():
        cells = [f"{est:>9}"]
        for tid in ids:
            rec = recs.get(tid)
            if rec is None:
                cells.append(f"{'-':>9}")
            else:
                mark = "*" if rec.outcome == "emptied-source" else ""
                cells.append(f"{rec.error_ml:8.1f}{mark or ' '}")
        s = summaries[est]
        cells += [f"{s.avg_ml:9.2f}", f"{s.rmse_ml:9.2f}", f"{s.std_ml:9.2f}"]
        lines.append("  ".join(cells))
    lines.append("(* = all contents left the source container)")
    return "\n".join(lines)


def write_report(out_dir: str | Path, payload: dict, tables_text: str = "",
                 traces: dict[str, np.ndarray] | None = None) -> Path:
    """Write report.json, the plain-text tables and per-trial trace CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    with open(report_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if tables_text:
        (out_dir / "tables.txt").write_text(tables_text + "\n")
    if traces:
        trace_dir = out_dir / "traces"
        trace_dir.mkdir(exist_ok=True)
        for name, trace in traces.items():
            write_trace_csv(trace_dir / f"{name}.csv", trace)
    return report_path


def predictor_from_spec(spec: str | Path):
    """Resolve an estimator argument: a model file path or a baseline name."""
    if isinstance(spec, (str, Path)) and str(spec) == ANALYTICAL_FZ:
        return AnalyticalFz()
    return Model.load(spec)
