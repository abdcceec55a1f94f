"""Rest-to-rest cubic workspace trajectories.

Position runs on one cubic polynomial per axis; orientation runs on a cubic
rotation-vector polynomial composed onto the start orientation through the
exponential map. Both use zero boundary velocities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3
from .classical import GraspProposal
from .so3 import Pose


@dataclass
class CubicTrajectory:
    """Coefficients (a, b, c, d) per row for position axes and rotation-vector
    components, valid on [t_i, t_f]."""

    t_i: float
    t_f: float
    pos_coeffs: np.ndarray  # (3, 4)
    rot_coeffs: np.ndarray  # (3, 4)
    R_start: np.ndarray

    def __post_init__(self):
        if self.t_f <= self.t_i:
            raise ValueError("t_f must be > t_i")
        self.pos_coeffs = np.asarray(self.pos_coeffs, dtype=float).reshape(3, 4)
        self.rot_coeffs = np.asarray(self.rot_coeffs, dtype=float).reshape(3, 4)
        self.R_start = np.asarray(self.R_start, dtype=float).reshape(3, 3)


@dataclass
class TrajectorySample:
    p_d: np.ndarray      # desired position, m
    pdot_d: np.ndarray   # desired velocity, m/s
    R_d: np.ndarray      # desired orientation
    w_ff: np.ndarray     # rotation-vector rate (angular feedforward), rad/s


def cubic_coeffs(t_i: float, t_f: float, x_i: float, x_f: float):
    """(a, b, c, d) with x(t_i) = x_i, x(t_f) = x_f, zero end velocities.

    Solves the 4x4 boundary system directly; the residual is asserted below
    1e-10 to catch ill-conditioned time windows.
    """
    if t_f <= t_i:
        raise ValueError("t_f must be > t_i")
    A = np.array([
        [1.0, t_i, t_i ** 2, t_i ** 3],
        [1.0, t_f, t_f ** 2, t_f ** 3],
        [0.0, 1.0, 2.0 * t_i, 3.0 * t_i ** 2],
        [0.0, 1.0, 2.0 * t_f, 3.0 * t_f ** 2],
    ])
    q = np.array([x_i, x_f, 0.0, 0.0])
    coeffs = np.linalg.solve(A, q)
    residual = np.linalg.norm(A @ coeffs - q)
    if residual >= 1e-10:
        raise ArithmeticError(f"cubic solve residual {residual:.3e} too large")
    return tuple(coeffs)


def plan(start: Pose, target: GraspProposal, grasp_z: float,
         t_i: float, t_f: float) -> CubicTrajectory:
    """Plan a grasp approach from `start` to the proposal at height grasp_z.

    The final orientation is the gripper-down frame yawed by the proposal's
    theta; the rotation-vector boundary is 0 -> log(R_start^T R_final).
    Rotations of half a turn or more cannot be planned (log singularity).
    """
    p_f = np.array([target.x, target.y, grasp_z])
    R_f = so3.grasp_orientation(target.theta)
    try:
        w_final = so3.log_so3(start.R.T @ R_f)
    except ValueError as err:
        raise ValueError(f"cannot plan rotation: {err}") from err
    pos = np.array([cubic_coeffs(t_i, t_f, start.p[i], p_f[i]) for i in range(3)])
    rot = np.array([cubic_coeffs(t_i, t_f, 0.0, w_final[i]) for i in range(3)])
    return CubicTrajectory(t_i, t_f, pos, rot, start.R.copy())


def sample(traj: CubicTrajectory, t: float) -> TrajectorySample:
    """Evaluate the trajectory at t (clamped to [t_i, t_f])."""
    t = min(max(t, traj.t_i), traj.t_f)
    powers = np.array([1.0, t, t * t, t ** 3])
    dpowers = np.array([0.0, 1.0, 2.0 * t, 3.0 * t * t])
    p_d = traj.pos_coeffs @ powers
    pdot_d = traj.pos_coeffs @ dpowers
    w = traj.rot_coeffs @ powers
    w_ff = traj.rot_coeffs @ dpowers
    R_d = traj.R_start @ so3.exp_so3(w)
    return TrajectorySample(p_d, pdot_d, R_d, w_ff)


def sample_times(traj: CubicTrajectory, rate: float) -> np.ndarray:
    """Uniform sample instants from t_i to t_f inclusive at `rate` Hz."""
    if rate <= 0:
        raise ValueError("rate must be > 0")
    n = int(np.floor((traj.t_f - traj.t_i) * rate))
    ts = traj.t_i + np.arange(n + 1) / rate
    if ts[-1] < traj.t_f:
        ts = np.append(ts, traj.t_f)
    return ts
