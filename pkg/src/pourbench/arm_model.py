"""Serial-arm kinematics and static wrench recovery.

A chain is an ordered list of revolute joints. Link i first rotates about its
joint axis by q[i], then applies the link's fixed transform; the end-effector
frame is the frame after the last link. All outputs are expressed in the base
frame.

Naming note: throughout this package `joint_torques` is the 7-vector measured
at the joints and `wrench` is the 6-vector (force, torque) at the end
effector. The static relation between them is

    jacobian(q)^T @ wrench = joint_torques

and `estimate_ee_wrench` inverts it in the least-squares sense.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GRAVITY = 9.8  # m/s^2
ML_TO_N = 0.0098  # 1 ml of water weighs 0.0098 N (rho = 1 g/ml, g = 9.8)

# Relative singular-value cutoff below which the arm is treated as singular.
SINGULARITY_REL_TOL = 1e-9


class SingularityError(RuntimeError):
    """The Jacobian lost rank; wrench recovery is unreliable here."""


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@dataclass(frozen=True)
class Link:
    """One revolute joint plus the rigid link that follows it."""

    axis: np.ndarray         # unit rotation axis, expressed in the preceding frame
    rotation: np.ndarray     # 3x3 fixed rotation of the link
    translation: np.ndarray  # fixed translation of the link [m]

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        n = float(np.linalg.norm(self.axis))
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"joint axis must have unit norm, got {n!r}")


@dataclass(frozen=True)
class KinematicChain:
    """Ordered revolute-joint chain of a serial arm."""

    links: tuple[Link, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if self.n_joints < 2:
            raise ValueError("chain needs at least 2 joints")

    @property
    def n_joints(self) -> int:
        return len(self.links)

    @classmethod
    def from_dict(cls, spec: dict) -> "KinematicChain":
        links = []
        for entry in spec["links"]:
            rot = np.asarray(entry.get("rotation", np.eye(3).ravel()), dtype=float).reshape(3, 3)
            links.append(Link(axis=entry["axis"], rotation=rot, translation=entry["translation"]))
        return cls(links=tuple(links))

    @classmethod
    def from_json_file(cls, path: str | Path) -> "KinematicChain":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "links": [
                {
                    "axis": list(map(float, ln.axis)),
                    "rotation": list(map(float, ln.rotation.ravel())),
                    "translation": list(map(float, ln.translation)),
                }
                for ln in self.links
            ]
        }


@dataclass
class JointState:
    """Joint positions [rad], velocities [rad/s] and torques [N*m]."""

    positions: np.ndarray
    velocities: np.ndarray
    torques: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).ravel()
        self.velocities = np.asarray(self.velocities, dtype=float).ravel()
        self.torques = np.asarray(self.torques, dtype=float).ravel()
        n = self.positions.size
        if self.velocities.size != n or self.torques.size != n:
            raise ValueError("positions, velocities and torques must have equal length")
        for arr in (self.positions, self.velocities, self.torques):
            if not np.all(np.isfinite(arr)):
                raise ValueError("joint state must be finite")


@dataclass
class Wrench:
    """Force [N] and torque [N*m] at the end effector, base frame."""

    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(3)
        self.torque = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.torque))):
            raise ValueError("wrench components must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "Wrench":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(force=v[:3], torque=v[3:])


def _check_positions(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    if q.size != chain.n_joints:
        raise ValueError(f"expected {chain.n_joints} joint positions, got {q.size}")
    return q


def frame_chain(chain: KinematicChain, q: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """All intermediate frames (R, p): element i is the frame *before* joint i+1;
    the last element is the end-effector frame. Element 0 is the base."""
    q = _check_positions(chain, q)
    R = np.eye(3)
    p = np.zeros(3)
    frames = [(R, p)]
    for link, qi in zip(chain.links, q):
        R_joint = R @ rotation_about_axis(link.axis, qi)
        p = p + R_joint @ link.translation
        R = R_joint @ link.rotation
        frames.append((R, p))
    return frames


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """End-effector pose (rotation, position) in the base frame."""
    R, p = frame_chain(chain, q)[-1]
    return R, p


def geometric_jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """6 x n Jacobian: rows 0-2 linear, rows 3-5 angular EE velocity per joint rate.

    Column i is (z_i x (p_ee - p_i), z_i) with z_i the i-th joint axis and p_i
    its origin, both in the base frame.
    """
    q = _check_positions(chain, q)
    frames = frame_chain(chain, q)
    p_ee = frames[-1][1]
    jac = np.zeros((6, chain.n_joints))
    for i, link in enumerate(chain.links):
        R_prev, p_prev = frames[i]
        z = R_prev @ link.axis
        jac[:3, i] = np.cross(z, p_ee - p_prev)
        jac[3:, i] = z
    return jac


def wrench_map_from_jacobian(jac: np.ndarray,
                             rel_tol: float = SINGULARITY_REL_TOL) -> np.ndarray:
    """Pseudoinverse of jacobian^T, i.e. the 6 x n map from joint torques to
    the least-squares end-effector wrench. Raises SingularityError when the
    smallest singular value falls below rel_tol times the largest."""
    jt = np.asarray(jac, dtype=float).T  # n x 6
    u, s, vt = np.linalg.svd(jt, full_matrices=False)
    if s[-1] < rel_tol * s[0]:
        raise SingularityError(
            f"jacobian is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3e})")
    return vt.T @ np.diag(1.0 / s) @ u.T


def wrench_solver(chain: KinematicChain, q: np.ndarray,
                  rel_tol: float = SINGULARITY_REL_TOL) -> np.ndarray:
    """Torques-to-wrench map evaluated at a configuration."""
    if chain.n_joints < 6:
        raise ValueError("wrench recovery needs at least 6 joints")
    return wrench_map_from_jacobian(geometric_jacobian(chain, q), rel_tol)


def estimate_ee_wrench(chain: KinematicChain, q: np.ndarray,
                       joint_torques: np.ndarray,
                       rel_tol: float = SINGULARITY_REL_TOL) -> Wrench:
    """Recover the external end-effector wrench that statically explains the
    measured joint torques (minimum-norm least-squares solution)."""
    torques = np.asarray(joint_torques, dtype=float).ravel()
    if torques.size != chain.n_joints:
        raise ValueError(f"expected {chain.n_joints} torques, got {torques.size}")
    return Wrench.from_vector(wrench_solver(chain, q, rel_tol) @ torques)


def _package_data(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def default_chain() -> KinematicChain:
    """The 7-DOF reference arm shipped with the package."""
    return KinematicChain.from_json_file(_package_data("default_chain.json"))
