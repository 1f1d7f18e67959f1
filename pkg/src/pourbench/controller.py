"""Pouring controller: pour-start detection, trapezoidal weight reference,
PID wrist-velocity regulation and the three-state trial FSM.

States always advance forward: TILT_UNTIL_FLOW -> REGULATE_POUR ->
RETURN_UPRIGHT. The first state tilts at a constant low speed while watching
the averaged derivative of the weight feedback; once flow is detected, a
trapezoidal weight-vs-time reference is anchored at the latest measurement
and the PID tracks it until the target is reached within tolerance, after
which the wrist rotates back upright on an open-loop velocity profile.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass

import numpy as np


class FsmState(enum.Enum):
    TILT_UNTIL_FLOW = "TiltUntilFlow"
    REGULATE_POUR = "RegulatePour"
    RETURN_UPRIGHT = "ReturnUpright"


class Outcome(enum.Enum):
    COMPLETED = "completed"
    EMPTIED_SOURCE = "emptied-source"
    TIMEOUT = "timeout"


@dataclass
class ControllerConfig:
    kp: float = 0.4
    ki: float = 0.0
    kd: float = 0.4
    pour_rate_n_s: float = 0.45
    target_weight_n: float = 1.5
    target_tolerance_n: float = 0.02
    start_window: int = 50
    start_threshold_n_s: float = 0.05
    tilt_search_velocity_rad_s: float = 0.08
    max_wrist_velocity_rad_s: float = 0.5
    max_ref_accel_n_s2: float = 2.0
    control_period_s: float = 0.01
    deriv_filter_tau_s: float = 0.1
    return_velocity_rad_s: float = 0.5
    return_accel_rad_s2: float = 1.0
    max_search_tilt_rad: float = math.pi / 2
    max_tilt_rad: float = 1.9
    stall_window_s: float = 2.0
    stall_epsilon_n: float = 0.02

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be non-negative")
        if self.pour_rate_n_s <= 0 or self.target_tolerance_n <= 0:
            raise ValueError("pour rate and tolerance must be positive")
        if self.control_period_s <= 0:
            raise ValueError("control period must be positive")

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "ControllerConfig":
        merged = dict(d)
        merged.update(overrides)
        return cls(**merged)


def detect_pour_start(history, window: int, threshold_n_s: float,
                      period_s: float) -> bool:
    """True once the mean first difference of the last `window` feedback
    samples, expressed as a rate, exceeds the threshold."""
    hist = np.asarray(history, dtype=float)
    if hist.size < window:
        raise ValueError(f"need at least {window} samples, got {hist.size}")
    recent = hist[-window:]
    slope = float(np.mean(np.diff(recent))) / period_s
    return slope > threshold_n_s


class TrapezoidProfile:
    """Accelerate-cruise-decelerate reference in weight space.

    Degenerates to a triangular profile when the travel is too short to reach
    the cruise rate, and to a constant when target <= start.
    """

    def __init__(self, start: float, rate: float, accel: float, target: float):
        if rate <= 0 or accel <= 0:
            raise ValueError("rate and accel must be positive")
        self.start = float(start)
        self.target = float(target)
        travel = self.target - self.start
        if travel <= 0:
            self.start = self.target
            self.rate = 0.0
            self.accel = accel
            self.t_accel = 0.0
            self.t_cruise = 0.0
        else:
            t_accel = rate / accel
            if accel * t_accel ** 2 >= travel:      # triangular: never reaches `rate`
                t_accel = math.sqrt(travel / accel)
                self.rate = accel * t_accel
                self.t_cruise = 0.0
            else:
                self.rate = rate
                self.t_cruise = (travel - accel * t_accel ** 2) / rate
            self.accel = accel
            self.t_accel = t_accel

    @property
    def duration(self) -> float:
        return 2.0 * self.t_accel + self.t_cruise

    def done(self, t: float) -> bool:
        return t >= self.duration

    def value(self, t: float) -> float:
        if t <= 0.0:
            return self.start
        if t >= self.duration:
            return self.target
        a, ta, tc = self.accel, self.t_accel, self.t_cruise
        if t < ta:
            return self.start + 0.5 * a * t * t
        if t < ta + tc:
            return self.start + 0.5 * a * ta * ta + self.rate * (t - ta)
        dt_end = self.duration - t
        return self.target - 0.5 * a * dt_end * dt_end


class VelocityProfile:
    """Open-loop trapezoidal velocity profile covering a fixed angular travel."""

    def __init__(self, travel_rad: float, v_max: float, accel: float):
        self.direction = -1.0 if travel_rad < 0 else 1.0
        d = abs(travel_rad)
        v = min(v_max, math.sqrt(d * accel))
        self.v = v
        self.accel = accel
        self.t_accel = v / accel
        self.t_cruise = max(0.0, (d - v * v / accel) / v) if v > 0 else 0.0

    @property
    def duration(self) -> float:
        return 2.0 * self.t_accel + self.t_cruise

    def velocity(self, t: float) -> float:
        if t < 0 or t >= self.duration:
            return 0.0
        if t < self.t_accel:
            speed = self.accel * t
        elif t < self.t_accel + self.t_cruise:
            speed = self.v
        else:
            speed = self.accel * (self.duration - t)
        return self.direction * speed


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float | None = None
    deriv: float = 0.0


def pid_step(cfg: ControllerConfig, ref: float, measured: float,
             state: PidState) -> float:
    """One PID iteration; output clamped to the wrist-velocity limit with
    integrator clamping anti-windup (no accumulation while saturated).

    The derivative is low-passed with time constant `deriv_filter_tau_s`
    (0 disables the filter) so it stays usable on noisy estimator feedback.
    """
    e = ref - measured
    if state.prev_error is None:
        deriv_raw = 0.0
    else:
        deriv_raw = (e - state.prev_error) / cfg.control_period_s
    if cfg.deriv_filter_tau_s > 0:
        alpha = cfg.control_period_s / (cfg.deriv_filter_tau_s + cfg.control_period_s)
        state.deriv += alpha * (deriv_raw - state.deriv)
    else:
        state.deriv = deriv_raw
    u = cfg.kp * e + cfg.ki * state.integral + cfg.kd * state.deriv
    limit = cfg.max_wrist_velocity_rad_s
    clamped = min(max(u, -limit), limit)
    if clamped == u:
        state.integral += e * cfg.control_period_s
    state.prev_error = e
    return clamped


class PouringFsm:
    """Per-trial pouring state machine ticked at the control rate."""

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self.state = FsmState.TILT_UNTIL_FLOW
        self.outcome: Outcome | None = None
        self.finished = False
        self.history: deque = deque(maxlen=cfg.start_window)
        self.stall: deque = deque()
        self.trapezoid: TrapezoidProfile | None = None
        self.return_profile: VelocityProfile | None = None
        self.pid = PidState()
        self.wrist0: float | None = None
        self.t_detect: float | None = None
        self.t_event: float | None = None   # target reached or abort
        self.last_ref = 0.0

    def _enter_return(self, t: float, tilt: float, outcome: Outcome) -> None:
        self.state = FsmState.RETURN_UPRIGHT
        self.outcome = outcome
        self.t_event = t
        self.return_profile = VelocityProfile(-tilt, self.cfg.return_velocity_rad_s,
                                              self.cfg.return_accel_rad_s2)

    def tick(self, t: float, measured: float, wrist_pos: float) -> float:
        """Consume one feedback sample, return the wrist velocity command."""
        cfg = self.cfg
        if self.wrist0 is None:
            self.wrist0 = wrist_pos
        tilt = wrist_pos - self.wrist0

        if self.state is FsmState.TILT_UNTIL_FLOW:
            self.history.append(measured)
            u = cfg.tilt_search_velocity_rad_s
            if (len(self.history) == cfg.start_window
                    and detect_pour_start(self.history, cfg.start_window,
                                          cfg.start_threshold_n_s, cfg.control_period_s)):
                self.trapezoid = TrapezoidProfile(measured, cfg.pour_rate_n_s,
                                                  cfg.max_ref_accel_n_s2,
                                                  cfg.target_weight_n)
                self.t_detect = t
                self.state = FsmState.REGULATE_POUR
                u = 0.0
            elif tilt >= cfg.max_search_tilt_rad:
                self._enter_return(t, tilt, Outcome.EMPTIED_SOURCE)
                u = 0.0
        elif self.state is FsmState.REGULATE_POUR:
            ref = self.trapezoid.value(t - self.t_detect)
            self.last_ref = ref
            u = pid_step(cfg, ref, measured, self.pid)
            self.stall.append((t, measured))
            while self.stall and self.stall[0][0] < t - cfg.stall_window_s:
                self.stall.popleft()
            if abs(cfg.target_weight_n - measured) <= cfg.target_tolerance_n:
                self._enter_return(t, tilt, Outcome.COMPLETED)
                u = 0.0
            elif (tilt >= 0.95 * cfg.max_tilt_rad
                    and self.stall[0][0] <= t - cfg.stall_window_s + cfg.control_period_s
                    and self._stalled()):
                self._enter_return(t, tilt, Outcome.EMPTIED_SOURCE)
                u = 0.0
        else:  # RETURN_UPRIGHT
            u = self.return_profile.velocity(t - self.t_event)
            if t - self.t_event >= self.return_profile.duration:
                self.finished = True
                u = 0.0

        if tilt >= self.cfg.max_tilt_rad:
            u = min(u, 0.0)
        limit = cfg.max_wrist_velocity_rad_s
        return min(max(u, -limit), limit)

    def _stalled(self) -> bool:
        values = [m for _, m in self.stall]
        return (max(values) - min(values)) < self.cfg.stall_epsilon_n

    def reference(self) -> float:
        return self.last_ref
