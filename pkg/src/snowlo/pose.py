"""Rigid transforms.

A :class:`Pose` maps points ``p -> R @ p + t``. ``compose(a, b)`` applies
``b`` first, i.e. it is the homogeneous product ``a @ b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class Pose:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix(), t)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians (atan2 form, accurate near zero)."""
        R = self.R
        s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        c = 0.5 * (np.trace(R) - 1.0)
        return float(np.arctan2(s, c))

    def orthonormalized(self) -> "Pose":
        return Pose(project_to_rotation(self.R), self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self) -> str:
        rv = Rotation.from_matrix(self.R).as_rotvec()
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def compose(delta: Pose, base: Pose) -> Pose:
    """``R = dR @ R_base``, ``t = dR @ t_base + dt``, re-orthonormalised."""
    return Pose(project_to_rotation(delta.R @ base.R), delta.R @ base.t + delta.t)


def pose_error(est: Pose, gt: Pose) -> tuple[float, float]:
    """Translation (m) and rotation (rad) magnitude of ``gt^-1 * est``."""
    e = compose(gt.inverse(), est)
    return float(np.linalg.norm(e.t)), e.rotation_angle()
