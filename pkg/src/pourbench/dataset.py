"""Trial sampling, closed-loop execution, 100 Hz logging and persistence.

A trial couples the pouring physics, the synthetic sensor feeds and the
controller at fixed rates (sim 1 kHz, plate 200 Hz, tactile/control 100 Hz).
The logged ground truth is the receiving-plate weight advanced in time by the
free-fall delay, so it represents weight as it leaves the source container.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as config_mod
from .arm_model import (ML_TO_N, SingularityError, frame_chain, geometric_jacobian,
                        wrench_map_from_jacobian)
from .controller import ControllerConfig, Outcome, PouringFsm
from .pour_sim import ButterworthLowPass, SimWorld, free_fall_delay, plate_read, step
from .sensor_sim import Conditioner, ConditionedFrame, TactileFeed, TorqueFeed

N_TACTILE = 19

COLUMNS = (["t", "wrist_pos", "wrist_vel", "fx", "fy", "fz", "tx", "ty", "tz"]
           + [f"ta{i:02d}" for i in range(N_TACTILE)]
           + [f"tb{i:02d}" for i in range(N_TACTILE)]
           + ["plate_raw", "gt_poured"])

COL_T = 0
COL_WRIST_POS = 1
COL_WRIST_VEL = 2
COL_WRENCH = slice(3, 9)
COL_FZ = 5
COL_TA = slice(9, 9 + N_TACTILE)
COL_TB = slice(9 + N_TACTILE, 9 + 2 * N_TACTILE)
COL_PLATE = 47
COL_GT = 48


@dataclass
class TrialConfig:
    """One sampled pouring trial."""

    kp: float
    kd: float
    pour_rate_n_s: float
    source_volume_ml: float
    target_weight_n: float
    grasp_offset_mm: float
    pour_location: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        self.pour_location = tuple(float(v) for v in self.pour_location)

    def to_dict(self) -> dict:
        return {"kp": self.kp, "kd": self.kd, "pour_rate_n_s": self.pour_rate_n_s,
                "source_volume_ml": self.source_volume_ml,
                "target_weight_n": self.target_weight_n,
                "grasp_offset_mm": self.grasp_offset_mm,
                "pour_location": list(self.pour_location), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrialConfig":
        return cls(kp=d["kp"], kd=d["kd"], pour_rate_n_s=d["pour_rate_n_s"],
                   source_volume_ml=d["source_volume_ml"],
                   target_weight_n=d["target_weight_n"],
                   grasp_offset_mm=d["grasp_offset_mm"],
                   pour_location=tuple(d["pour_location"]), seed=int(d["seed"]))


@dataclass
class TrialLog:
    """Full record of one executed trial."""

    config: TrialConfig
    frames: np.ndarray                 # (n, 49) in COLUMNS order
    outcome: str
    final_poured_ml: float
    events: dict = field(default_factory=dict)
    commands: list = field(default_factory=list)  # (t, state, ref, measured, u)


def sample_config(rng: np.random.Generator, trial_cfg: dict,
                  pour_location) -> TrialConfig:
    """Draw controller gains, pour rate, source volume and target uniformly
    from the configured ranges; the target is capped to the configured
    fraction of the source weight so a pour can never be a full dump."""
    kp = rng.uniform(*trial_cfg["kp_range"])
    kd = rng.uniform(*trial_cfg["kd_range"])
    pour_rate = rng.uniform(*trial_cfg["pour_rate_range_n_s"])
    source_ml = rng.uniform(*trial_cfg["source_range_ml"])
    target_n = rng.uniform(*trial_cfg["target_range_n"])
    cap_n = trial_cfg["target_cap_fraction"] * source_ml * ML_TO_N
    target_n = min(target_n, cap_n)
    seed = int(rng.integers(0, 2**31 - 1))
    return TrialConfig(kp=kp, kd=kd, pour_rate_n_s=pour_rate,
                       source_volume_ml=source_ml, target_weight_n=target_n,
                       grasp_offset_mm=0.0, pour_location=tuple(pour_location),
                       seed=seed)


def shift_ground_truth(values: np.ndarray, spout_heights: np.ndarray,
                       times: np.ndarray,
                       constant_delay_s: float | None = None) -> np.ndarray:
    """Advance a plate-side series in time by the free-fall delay so it reads
    as weight leaving the source. The delay follows the spout height sample
    by sample unless a constant delay is forced; the tail holds the last
    value (np.interp pads with the edge)."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if constant_delay_s is not None:
        delays = np.full(times.shape, float(constant_delay_s))
    else:
        delays = np.array([free_fall_delay(h) for h in np.asarray(spout_heights, dtype=float)])
    return np.interp(times + delays, times, values)


def split_trials(items, counts=(210, 20, 20), seed: int = 0):
    """Disjoint trial-level split into (train, val, test) of the exact sizes."""
    items = list(items)
    total = sum(counts)
    if len(items) < total:
        raise ValueError(f"need at least {total} trials to split, got {len(items)}")
    perm = np.random.default_rng(seed).permutation(len(items))
    out = []
    at = 0
    for c in counts:
        idx = sorted(perm[at:at + c])
        out.append([items[i] for i in idx])
        at += c
    return tuple(out)


class TrialRunner:
    """Binds a configuration to executable trials.

    Holds the arm, container, sensor parameters and controller defaults; each
    `run` call owns its own world and feeds, so distinct trials can execute
    in parallel processes.
    """

    def __init__(self, cfg: dict | None = None):
        self.cfg = cfg if cfg is not None else config_mod.default_config()
        self.chain = config_mod.chain_from_config(self.cfg)
        self.container = config_mod.container_from_config(self.cfg)
        self.sensors = config_mod.sensors_from_config(self.cfg)

    @property
    def default_location(self) -> tuple[float, float, float]:
        return tuple(self.cfg["poses"]["default"]["location"])

    def resolve_pose(self, location) -> np.ndarray:
        """Joint configuration used to pour at a known location."""
        loc = np.asarray(location, dtype=float)
        for name, pose in self.cfg["poses"].items():
            if np.allclose(loc, pose["location"], atol=1e-9):
                return np.asarray(pose["q"], dtype=float)
        raise ValueError(f"no configured arm pose for pour location {list(loc)}")

    def controller_config(self, trial: TrialConfig,
                          deployment: bool = False) -> ControllerConfig:
        base = dict(self.cfg["controller"])
        if deployment:
            # estimator feedback is noisier than the plate; detection uses the
            # wider window / higher threshold configured for deployment
            base["start_window"] = self.cfg["deployment"]["start_window"]
            base["start_threshold_n_s"] = self.cfg["deployment"]["start_threshold_n_s"]
        base["control_period_s"] = self.cfg["sim"]["control_period_s"]
        return ControllerConfig.from_dict(
            base, kp=trial.kp, kd=trial.kd, pour_rate_n_s=trial.pour_rate_n_s,
            target_weight_n=trial.target_weight_n)

    def run(self, trial: TrialConfig, feedback="plate",
            deployment: bool | None = None) -> TrialLog:
        """Execute one full trial and return its log.

        `feedback` selects what the controller measures: "plate" (filtered
        receiving-plate weight, the data-collection mode), "gt" (noise-free
        weight poured out of the source) or a callable mapping a
        ConditionedFrame to a weight estimate (deployment mode).
        """
        if deployment is None:
            deployment = callable(feedback)
        sim = self.cfg["sim"]
        dt = sim["dt_s"]
        period = sim["control_period_s"]
        block = round(period / dt)
        plate_every = round(1.0 / (200.0 * dt))

        q_pour = self.resolve_pose(trial.pour_location)
        plate_z = trial.pour_location[2]

        # Spout height is an exact closed form in the wrist angle: the static
        # joints fix the wrist frame, the last joint only spins the container.
        frames = frame_chain(self.chain, q_pour)
        R6, p6 = frames[-2]
        last = self.chain.links[-1]
        m_vec = last.translation + last.rotation @ np.asarray(self.container.spout_offset_m)
        su_a = R6[2, 0] * m_vec[0] + R6[2, 1] * m_vec[1]
        su_b = -R6[2, 0] * m_vec[1] + R6[2, 1] * m_vec[0]
        su_c = p6[2] + R6[2, 2] * m_vec[2]
        wrist0 = q_pour[-1]

        def spout_height(tilt: float) -> float:
            q7 = wrist0 + tilt
            return su_c + su_a * math.cos(q7) + su_b * math.sin(q7) - plate_z

        world = SimWorld.create(self.container, trial.source_volume_ml,
                                spout_height_m=spout_height(0.0))
        seeds = np.random.SeedSequence(trial.seed).spawn(2)
        torque_feed = TorqueFeed(self.sensors, seeds[0], dt=dt)
        tactile_feed = TactileFeed(self.sensors, seeds[1])
        conditioner = Conditioner()
        ctrl = PouringFsm(self.controller_config(trial, deployment=deployment))

        jac = geometric_jacobian(self.chain, q_pour)
        solver = _wrench_map(jac)
        jac_refresh = 50  # blocks; the single moving joint changes J slowly
        blocks_since_jac = 0

        q_now = q_pour.copy()
        step_count = 0
        plate_latest = 0.0

        def sim_block(u: float):
            nonlocal jac, solver, blocks_since_jac, step_count, plate_latest
            blocks_since_jac += 1
            if blocks_since_jac >= jac_refresh:
                q_now[-1] = wrist0 + world.tilt_rad
                jac = geometric_jacobian(self.chain, q_now)
                solver = _wrench_map(jac, fallback=solver)
                blocks_since_jac = 0
            wrist_angles = np.empty(block)
            weights = np.empty(block)
            for k in range(block):
                step(world, u, dt, spout_height_m=spout_height(world.tilt_rad))
                wrist_angles[k] = wrist0 + world.tilt_rad
                weights[k] = world.source_volume_ml * ML_TO_N
                step_count += 1
                if step_count % plate_every == 0:
                    plate_latest = plate_read(world).force_n
            torques = torque_feed.sample_block(jac, q_pour, wrist_angles, weights)
            wrenches = torques @ solver.T
            for w in wrenches:
                conditioner.push_wrench(w)
            conditioner.push_tactile(
                tactile_feed.sample(weights[-1], world.tilt_rad, trial.grasp_offset_mm))
            conditioner.set_kinematics(wrist_angles[-1], u)

        # An estimator replaces the plate, whose output is low-passed by the
        # sensor itself; its noisy predictions get the same treatment before
        # they reach the controller.
        fb_cutoff = self.cfg["deployment"].get("feedback_filter_cutoff_hz", 0.0)
        fb_filter = (ButterworthLowPass(fb_cutoff, 1.0 / period)
                     if (deployment and fb_cutoff > 0) else None)

        def measured_value(frame: ConditionedFrame) -> float:
            if feedback == "plate":
                return plate_latest
            if feedback == "gt":
                return (world.initial_volume_ml - world.source_volume_ml) * ML_TO_N
            value = float(feedback(frame))
            if fb_filter is not None:
                value = fb_filter.update(value)
            return value

        rows: list[np.ndarray] = []
        received_at_frames: list[float] = []
        heights_at_frames: list[float] = []
        commands: list[tuple] = []

        def log_frame(frame: ConditionedFrame):
            row = np.empty(len(COLUMNS))
            row[COL_T] = frame.t
            row[COL_WRIST_POS] = frame.wrist_pos
            row[COL_WRIST_VEL] = frame.wrist_vel
            row[COL_WRENCH] = frame.wrench
            row[COL_TA] = frame.tactile[0]
            row[COL_TB] = frame.tactile[1]
            row[COL_PLATE] = plate_latest
            row[COL_GT] = 0.0  # filled after the rollout
            rows.append(row)
            received_at_frames.append(world.received_volume_ml)
            heights_at_frames.append(world.spout_height_m)

        n_baseline = round(sim["baseline_s"] / period)
        n_prelog = round(sim["prelog_s"] / period)

        for _ in range(n_baseline):
            sim_block(0.0)
        conditioner.finalize_baseline()

        for _ in range(n_prelog):
            frame = conditioner.make_frame(world.t)
            log_frame(frame)
            sim_block(0.0)

        t_ctrl_start = world.t
        outcome = None
        while True:
            t = world.t
            frame = conditioner.make_frame(t)
            measured = measured_value(frame)
            u = ctrl.tick(t, measured, frame.wrist_pos)
            log_frame(frame)
            commands.append((t, ctrl.state.value, ctrl.reference(), measured, u))
            if ctrl.t_event is not None and t - ctrl.t_event >= sim["posttarget_log_s"] - 1e-9:
                outcome = ctrl.outcome
                break
            if ctrl.t_event is None and t - t_ctrl_start >= sim["timeout_s"]:
                outcome = Outcome.TIMEOUT
                break
            sim_block(u)

        frames_arr = np.array(rows)
        gt = shift_ground_truth(np.array(received_at_frames) * ML_TO_N,
                                np.array(heights_at_frames), frames_arr[:, COL_T])
        frames_arr[:, COL_GT] = gt

        events = {"t_control_start": t_ctrl_start,
                  "t_detect": ctrl.t_detect, "t_event": ctrl.t_event}
        final_poured = world.initial_volume_ml - world.source_volume_ml
        return TrialLog(config=trial, frames=frames_arr, outcome=outcome.value,
                        final_poured_ml=final_poured, events=events,
                        commands=commands)


def _wrench_map(jac: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    """Torques -> wrench map; on a singular configuration keep the previous
    map (the controller treats the frame as a sensor dropout)."""
    try:
        return wrench_map_from_jacobian(jac)
    except SingularityError:
        if fallback is None:
            raise
        return fallback


def run_and_log(runner: TrialRunner, trial: TrialConfig,
                feedback="plate") -> TrialLog:
    return runner.run(trial, feedback=feedback)


# ---------------------------------------------------------------------------
# persistence

def trial_basename(trial_id: int) -> str:
    return f"trial_{trial_id:03d}"


def save_trial(log: TrialLog, directory: str | Path, trial_id: int) -> dict:
    """Write the frame CSV, the command CSV and the JSON sidecar; returns the
    manifest entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = trial_basename(trial_id)
    csv_path = directory / f"{base}.csv"
    np.savetxt(csv_path, log.frames, fmt="%.6f", delimiter=",",
               header=",".join(COLUMNS), comments="")
    cmd_path = directory / f"{base}_commands.csv"
    with open(cmd_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "state", "ref", "measured", "u"])
        for t, state, ref, measured, u in log.commands:
            writer.writerow([f"{t:.6f}", state, f"{ref:.6f}", f"{measured:.6f}", f"{u:.6f}"])
    sidecar = {
        "config": log.config.to_dict(),
        "outcome": log.outcome,
        "final_poured_ml": log.final_poured_ml,
        "events": log.events,
        "n_frames": int(log.frames.shape[0]),
    }
    json_path = directory / f"{base}.json"
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"id": trial_id, "csv": csv_path.name, "sidecar": json_path.name,
            "commands": cmd_path.name, "outcome": log.outcome,
            "final_poured_ml": round(log.final_poured_ml, 6)}


def load_trial(directory: str | Path, trial_id: int) -> TrialLog:
    directory = Path(directory)
    base = trial_basename(trial_id)
    frames = np.loadtxt(directory / f"{base}.csv", delimiter=",", skiprows=1)
    frames = np.atleast_2d(frames)
    with open(directory / f"{base}.json") as fh:
        sidecar = json.load(fh)
    return TrialLog(config=TrialConfig.from_dict(sidecar["config"]),
                    frames=frames, outcome=sidecar["outcome"],
                    final_poured_ml=sidecar["final_poured_ml"],
                    events=sidecar.get("events", {}))


def write_manifest(directory: str | Path, entries: list[dict], split: dict,
                   seed: int) -> Path:
    path = Path(directory) / "manifest.json"
    payload = {"seed": seed, "n_trials": len(entries), "trials": entries,
               "split": split}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(directory: str | Path) -> dict:
    with open(Path(directory) / "manifest.json") as fh:
        return json.load(fh)


def load_split_logs(directory: str | Path) -> dict[str, list[TrialLog]]:
    """Load the trials of each split named in the manifest."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    out = {}
    for name, ids in manifest["split"].items():
        out[name] = [load_trial(directory, tid) for tid in ids]
    return out
