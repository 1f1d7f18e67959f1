"""Configuration loading, merging and validation.

A run configuration is a JSON document with the blocks `sim`, `container`,
`sensors`, `controller`, `deployment`, `trial`, `poses` and `eval`. User
files are deep-merged over the packaged defaults; unknown keys and
wrong-typed values are rejected with the offending path in the message.
"""

from __future__ import annotations

import json
from pathlib import Path

from .arm_model import KinematicChain, default_chain
from .pour_sim import ContainerSpec
from .sensor_sim import SensorParams


class ConfigError(ValueError):
    """Invalid configuration; `path` points at the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


_NUMBER = (int, float)

# block -> key -> expected python type(s); list entries are numeric arrays
_SCHEMA = {
    "sim": {"dt_s": _NUMBER, "control_period_s": _NUMBER, "timeout_s": _NUMBER,
            "baseline_s": _NUMBER, "prelog_s": _NUMBER, "posttarget_log_s": _NUMBER},
    "container": {"capacity_ml": _NUMBER, "inner_radius_m": _NUMBER,
                  "height_m": _NUMBER, "spout_offset_m": list},
    "sensors": {"torque_noise_std_nm": _NUMBER, "torque_drift_std_nm_sqrt_s": _NUMBER,
                "bias_static_amp_nm": list, "bias_static_phase_rad": list,
                "bias_wrist_amp_nm": list, "bias_wrist_phase_rad": list,
                "tactile_noise_std": _NUMBER, "tactile_model_seed": int},
    "controller": {"kp": _NUMBER, "ki": _NUMBER, "kd": _NUMBER,
                   "target_tolerance_n": _NUMBER, "start_window": int,
                   "start_threshold_n_s": _NUMBER, "tilt_search_velocity_rad_s": _NUMBER,
                   "max_wrist_velocity_rad_s": _NUMBER, "max_ref_accel_n_s2": _NUMBER,
                   "deriv_filter_tau_s": _NUMBER,
                   "return_velocity_rad_s": _NUMBER, "return_accel_rad_s2": _NUMBER,
                   "max_search_tilt_rad": _NUMBER, "max_tilt_rad": _NUMBER,
                   "stall_window_s": _NUMBER, "stall_epsilon_n": _NUMBER},
    "deployment": {"start_window": int, "start_threshold_n_s": _NUMBER,
                   "feedback_filter_cutoff_hz": _NUMBER},
    "trial": {"kp_range": list, "kd_range": list, "pour_rate_range_n_s": list,
              "source_range_ml": list, "target_range_n": list,
              "target_cap_fraction": _NUMBER},
    "eval": {"novel_grasp_offsets_mm": list, "novel_location_poses": list,
             "sweep_trials": list},
}


def _validate_block(name: str, block: dict, schema: dict) -> None:
    for key, value in block.items():
        if key not in schema:
            raise ConfigError(f"{name}.{key}", "unknown key")
        expected = schema[key]
        if expected is list:
            if not isinstance(value, list):
                raise ConfigError(f"{name}.{key}", f"expected a list, got {type(value).__name__}")
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name}.{key}", f"expected an integer, got {value!r}")
        elif not isinstance(value, expected) or isinstance(value, bool):
            raise ConfigError(f"{name}.{key}", f"expected a number, got {value!r}")


def _validate(cfg: dict) -> None:
    for name, block in cfg.items():
        if name == "chain":
            if not isinstance(block, (str, dict)):
                raise ConfigError("chain", "expected a file path or an inline chain object")
            continue
        if name == "poses":
            for pose_name, pose in block.items():
                if set(pose) != {"q", "location"}:
                    raise ConfigError(f"poses.{pose_name}", "expected keys 'q' and 'location'")
                if len(pose["q"]) != 7:
                    raise ConfigError(f"poses.{pose_name}.q", "expected 7 joint angles")
                if len(pose["location"]) != 3:
                    raise ConfigError(f"poses.{pose_name}.location", "expected a 3-vector")
            continue
        if name not in _SCHEMA:
            raise ConfigError(name, "unknown config block")
        if not isinstance(block, dict):
            raise ConfigError(name, "expected an object")
        _validate_block(name, block, _SCHEMA[name])


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def default_config() -> dict:
    with open(Path(__file__).parent / "data" / "default_config.json") as fh:
        return json.load(fh)


def load_config(path: str | Path | None = None) -> dict:
    """Packaged defaults, optionally deep-merged with a user JSON file."""
    cfg = default_config()
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(str(path), f"not valid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(str(path), "top level must be an object")
        cfg = _deep_merge(cfg, user)
    _validate(cfg)
    return cfg


def chain_from_config(cfg: dict) -> KinematicChain:
    spec = cfg.get("chain")
    if spec is None:
        return default_chain()
    if isinstance(spec, str):
        return KinematicChain.from_json_file(spec)
    return KinematicChain.from_dict(spec)


def container_from_config(cfg: dict) -> ContainerSpec:
    return ContainerSpec.from_dict(cfg["container"])


def sensors_from_config(cfg: dict) -> SensorParams:
    return SensorParams.from_dict(cfg["sensors"])
