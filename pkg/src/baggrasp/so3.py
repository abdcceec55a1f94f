"""Rotation-matrix algebra: hat/vee, exp/log maps, z-axis rotations, the
downward-pointing grasp orientation, and the cross-product orientation error.

Conventions (used everywhere in this package): matrices are row-major 3x3
numpy arrays, frames are right-handed, and the world frame coincides with
the arm base frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Canonical gripper-down orientation: tool z axis anti-parallel to world z,
# x axis flipped to keep the frame right-handed.
GRIPPER_DOWN = np.array([
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, -1.0],
])

_SMALL_ANGLE = 1e-8
_ANTIPODE_MARGIN = 1e-6


@dataclass
class Pose:
    """End-effector position (m) and orientation in the world frame."""

    p: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)


def is_rotation(R, tol=1e-9) -> bool:
    """True if R is orthonormal with determinant +1 within tol."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    ortho = np.linalg.norm(R.T @ R - np.eye(3))
    return ortho < tol and abs(np.linalg.det(R) - 1.0) < tol


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix of v, so that hat(v) @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def vee(M) -> np.ndarray:
    """Inverse of hat. Rejects matrices that are not skew-symmetric."""
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or np.linalg.norm(M + M.T) >= 1e-8:
        raise ValueError("vee expects a 3x3 skew-symmetric matrix")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def exp_so3(w) -> np.ndarray:
    """Rotation matrix for the rotation vector w (Rodrigues formula).

    Angle is ||w||, axis w/||w||. Below the small-angle cutoff a second-order
    series is used to avoid the 0/0 in the closed form.
    """
    w = np.asarray(w, dtype=float).reshape(3)
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * W + c * (W @ W)


def log_so3(R) -> np.ndarray:
    """Rotation vector w with exp_so3(w) == R.

    w = (phi / (2 sin phi)) * vee(R - R^T) with phi = arccos((trace - 1)/2);
    the trace argument is clamped to [-1, 1] against rounding. Angles within
    1e-6 of pi are rejected: the formula is singular there and the axis it
    would return is ill-conditioned.
    """
    R = np.asarray(R, dtype=float)
    cos_phi = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    phi = np.arccos(cos_phi)
    if phi >= np.pi - _ANTIPODE_MARGIN:
        raise ValueError("log near antipode; axis ill-conditioned by this formula")
    anti = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if phi < _SMALL_ANGLE:
        return 0.5 * anti
    return (phi / (2.0 * np.sin(phi))) * anti


def rot_z(theta: float) -> np.ndarray:
    """Rotation by theta radians about the z axis."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])


def grasp_orientation(theta_d: float) -> np.ndarray:
    """Tool orientation for a top-down grasp with yaw theta_d.

    The gripper-down frame rotated about z; the third column is always
    (0, 0, -1).
    """
    return GRIPPER_DOWN @ rot_z(theta_d)


def rotation_error(R_d, R_e) -> np.ndarray:
    """Cross-product orientation error between desired and current frames.

    Sum over i of column_i(R_d) x column_i(R_e). Zero iff R_d == R_e; for a
    single-axis offset of angle phi its magnitude is 2|sin phi|.
    """
    R_d = np.asarray(R_d, dtype=float)
    R_e = np.asarray(R_e, dtype=float)
    e = np.zeros(3)
    for i in range(3):
        e += np.cross(R_d[:, i], R_e[:, i])
    return e
