"""Synthetic robot sensing: noisy joint torques, fingertip tactile arrays,
and the sliding-window / baseline conditioning applied before logging.

Torque samples are the static torques induced by the held weight plus a
configuration-dependent arm-self-weight bias, a slow random-walk drift and
white noise. Tactile channels respond to the held weight and container tilt
through per-channel gains that depend strongly on the grasp position, so a
millimetre-scale grasp shift visibly reshapes the signal pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_TACTILE_CHANNELS = 19

TORQUE_RATE_HZ = 1000.0
TACTILE_RATE_HZ = 100.0
CONDITIONED_RATE_HZ = 100.0

WRENCH_WINDOW = 100       # 100 ms of 1 kHz torque-derived wrenches
TACTILE_WINDOW = 10       # 100 ms of 100 Hz tactile frames
BASELINE_WRENCH_SAMPLES = 1000   # 1 s baseline capture
BASELINE_TACTILE_SAMPLES = 100


@dataclass
class SensorParams:
    """Noise magnitudes and synthesis gains for all simulated feeds."""

    torque_noise_std_nm: float = 0.15
    torque_drift_std_nm_sqrt_s: float = 0.002
    bias_static_amp_nm: np.ndarray = field(
        default_factory=lambda: np.array([3.0, 5.0, 2.0, 3.0, 1.0, 1.5, 0.3]))
    bias_static_phase_rad: np.ndarray = field(
        default_factory=lambda: np.array([0.3, 0.8, -0.4, 1.1, 0.2, -0.9, 0.5]))
    bias_wrist_amp_nm: np.ndarray = field(
        default_factory=lambda: np.array([0.02, 0.12, 0.05, 0.10, 0.03, 0.08, 0.015]))
    bias_wrist_phase_rad: np.ndarray = field(
        default_factory=lambda: np.array([0.4, -0.7, 1.2, 0.3, -1.1, 0.9, 0.0]))
    tactile_noise_std: float = 0.03
    tactile_model_seed: int = 20240
    tactile_alpha: np.ndarray | None = None      # weight gain, arb units / N
    tactile_beta: np.ndarray | None = None       # weight*sin(tilt) gain
    tactile_gain_lin: np.ndarray | None = None   # grasp sensitivity, 1/mm
    tactile_gain_quad: np.ndarray | None = None  # grasp sensitivity, 1/mm^2

    def __post_init__(self):
        for name in ("bias_static_amp_nm", "bias_static_phase_rad",
                     "bias_wrist_amp_nm", "bias_wrist_phase_rad"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.tactile_alpha is None:
            rng = np.random.default_rng(self.tactile_model_seed)
            shape = (2, N_TACTILE_CHANNELS)
            self.tactile_alpha = rng.uniform(0.8, 2.0, shape)
            self.tactile_beta = rng.uniform(-0.6, 0.6, shape)
            self.tactile_gain_lin = rng.uniform(-0.25, 0.25, shape)
            self.tactile_gain_quad = rng.uniform(-0.03, 0.05, shape)
        for name in ("tactile_alpha", "tactile_beta", "tactile_gain_lin", "tactile_gain_quad"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def from_dict(cls, d: dict) -> "SensorParams":
        return cls(**d)


def arm_bias_torques(params: SensorParams, q: np.ndarray) -> np.ndarray:
    """Smooth per-joint gravity-like bias. The wrist term models the held
    payload's centre of mass swinging with the wrist rotation; everything else
    is static during a pour and cancels in the baseline subtraction."""
    q = np.asarray(q, dtype=float)
    static = params.bias_static_amp_nm * np.sin(q + params.bias_static_phase_rad)
    wrist = params.bias_wrist_amp_nm * np.sin(q[-1] + params.bias_wrist_phase_rad)
    return static + wrist


class TorqueFeed:
    """1 kHz joint-torque synthesizer with persistent drift state."""

    def __init__(self, params: SensorParams, seed: int, dt: float = 1e-3):
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.dt = dt
        self.n_joints = params.bias_static_amp_nm.size
        self.drift = np.zeros(self.n_joints)

    def sample_block(self, jac: np.ndarray, q_static: np.ndarray,
                     wrist_angles: np.ndarray, weights_n: np.ndarray) -> np.ndarray:
        """Torques for a block of consecutive 1 kHz samples.

        `jac` is the 6 x n geometric Jacobian at the block's configuration;
        `wrist_angles` and `weights_n` give the per-sample wrist position and
        held weight. Returns an (m, n) torque array.
        """
        p = self.params
        wrist_angles = np.asarray(wrist_angles, dtype=float)
        weights_n = np.asarray(weights_n, dtype=float)
        m = wrist_angles.size

        wrench = np.zeros((m, 6))
        wrench[:, 2] = -weights_n       # held weight pulls the EE straight down
        torques = wrench @ jac          # static relation: torques = J^T * wrench

        q = np.asarray(q_static, dtype=float).copy()
        static = p.bias_static_amp_nm * np.sin(q + p.bias_static_phase_rad)
        torques += static[None, :]
        # wrist joint's own static term varies with the wrist angle
        torques[:, -1] += (p.bias_static_amp_nm[-1]
                           * (np.sin(wrist_angles + p.bias_static_phase_rad[-1])
                              - np.sin(q[-1] + p.bias_static_phase_rad[-1])))
        torques += (p.bias_wrist_amp_nm[None, :]
                    * np.sin(wrist_angles[:, None] + p.bias_wrist_phase_rad[None, :]))

        if p.torque_drift_std_nm_sqrt_s > 0:
            inc = self.rng.normal(0.0, p.torque_drift_std_nm_sqrt_s * np.sqrt(self.dt),
                                  (m, self.n_joints))
            path = self.drift[None, :] + np.cumsum(inc, axis=0)
            self.drift = path[-1].copy()
            torques += path
        if p.torque_noise_std_nm > 0:
            torques += self.rng.normal(0.0, p.torque_noise_std_nm, (m, self.n_joints))
        return torques

    def sample(self, jac: np.ndarray, q: np.ndarray, weight_n: float) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.sample_block(jac, q, np.array([q[-1]]), np.array([weight_n]))[0]


class TactileFeed:
    """100 Hz synthesizer for the two 19-channel fingertip arrays."""

    def __init__(self, params: SensorParams, seed: int):
        self.params = params
        self.rng = np.random.default_rng(seed)

    def grasp_gain(self, grasp_offset_mm: float) -> np.ndarray:
        if abs(grasp_offset_mm) > 5.0:
            raise ValueError("grasp offset beyond +-5 mm is outside the sensor model")
        p = self.params
        return (1.0 + p.tactile_gain_lin * grasp_offset_mm
                + p.tactile_gain_quad * grasp_offset_mm ** 2)

    def sample(self, weight_n: float, tilt_rad: float, grasp_offset_mm: float) -> np.ndarray:
        p = self.params
        signal = self.grasp_gain(grasp_offset_mm) * (
            p.tactile_alpha * weight_n + p.tactile_beta * weight_n * np.sin(tilt_rad))
        if p.tactile_noise_std > 0:
            signal = signal + self.rng.normal(0.0, p.tactile_noise_std, signal.shape)
        return signal


@dataclass
class ConditionedFrame:
    """One 100 Hz record after window averaging and baseline subtraction."""

    t: float
    wrist_pos: float
    wrist_vel: float
    wrench: np.ndarray    # (6,) window-averaged, baseline-subtracted
    tactile: np.ndarray   # (2, 19) window-averaged, baseline-subtracted


class _Ring:
    """Fixed-size ring buffer with a running sum for O(1) window means."""

    def __init__(self, window: int, dim: int):
        self.buf = np.zeros((window, dim))
        self.window = window
        self.idx = 0
        self.count = 0
        self.total = np.zeros(dim)

    def push(self, x: np.ndarray) -> None:
        if self.count == self.window:
            self.total -= self.buf[self.idx]
        else:
            self.count += 1
        self.buf[self.idx] = x
        self.total += x
        self.idx = (self.idx + 1) % self.window

    @property
    def full(self) -> bool:
        return self.count == self.window

    def mean(self) -> np.ndarray:
        return self.total / self.count


class Conditioner:
    """Builds conditioned frames from the raw feeds.

    Wrench samples arrive at 1 kHz, tactile frames at 100 Hz. After the
    baseline capture is finalized, `make_frame` returns sliding-window means
    with the baseline removed; before that (or while windows are filling) it
    returns None and the frame is withheld.
    """

    def __init__(self, wrench_window: int = WRENCH_WINDOW,
                 tactile_window: int = TACTILE_WINDOW,
                 baseline_wrench: int = BASELINE_WRENCH_SAMPLES,
                 baseline_tactile: int = BASELINE_TACTILE_SAMPLES):
        self._wrench = _Ring(wrench_window, 6)
        self._tactile = _Ring(tactile_window, 2 * N_TACTILE_CHANNELS)
        self._baseline_wrench_needed = baseline_wrench
        self._baseline_tactile_needed = baseline_tactile
        self._bw_sum = np.zeros(6)
        self._bw_count = 0
        self._bt_sum = np.zeros(2 * N_TACTILE_CHANNELS)
        self._bt_count = 0
        self.wrench_baseline: np.ndarray | None = None
        self.tactile_baseline: np.ndarray | None = None
        self.wrist_pos = 0.0
        self.wrist_vel = 0.0

    def push_wrench(self, wrench: np.ndarray) -> None:
        w = np.asarray(wrench, dtype=float).reshape(6)
        self._wrench.push(w)
        if self.wrench_baseline is None:
            self._bw_sum += w
            self._bw_count += 1

    def push_tactile(self, tactile: np.ndarray) -> None:
        t = np.asarray(tactile, dtype=float).reshape(2 * N_TACTILE_CHANNELS)
        self._tactile.push(t)
        if self.tactile_baseline is None:
            self._bt_sum += t
            self._bt_count += 1

    def set_kinematics(self, wrist_pos: float, wrist_vel: float) -> None:
        self.wrist_pos = float(wrist_pos)
        self.wrist_vel = float(wrist_vel)

    def finalize_baseline(self) -> None:
        if (self._bw_count < self._baseline_wrench_needed
                or self._bt_count < self._baseline_tactile_needed):
            raise RuntimeError("baseline window not yet filled")
        self.wrench_baseline = self._bw_sum / self._bw_count
        self.tactile_baseline = self._bt_sum / self._bt_count

    @property
    def ready(self) -> bool:
        return (self.wrench_baseline is not None
                and self._wrench.full and self._tactile.full)

    def make_frame(self, t: float) -> ConditionedFrame | None:
        if not self.ready:
            return None
        return ConditionedFrame(
            t=t,
            wrist_pos=self.wrist_pos,
            wrist_vel=self.wrist_vel,
            wrench=self._wrench.mean() - self.wrench_baseline,
            tactile=(self._tactile.mean() - self.tactile_baseline).reshape(2, N_TACTILE_CHANNELS),
        )
