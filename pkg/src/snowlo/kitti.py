"""KITTI-format scans, pose files and snow label files."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .cloud import PointCloud
from .errors import MalformedFile
from .pose import Pose, project_to_rotation
from .trajectory import Trajectory

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def read_cloud_bin(path: PathLike, labels: Optional[np.ndarray] = None) -> PointCloud:
    """Little-endian float32 ``(x, y, z, intensity)`` records."""
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise MalformedFile(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(data)):
        raise MalformedFile(f"{path}: non-finite values")
    if np.any(data[:, 3] < 0):
        raise MalformedFile(f"{path}: negative intensity")
    return PointCloud(data[:, :3].astype(np.float64), data[:, 3].astype(np.float64),
                      None, labels)


def write_cloud_bin(path: PathLike, cloud: PointCloud) -> None:
    data = np.column_stack([cloud.positions, cloud.intensities]).astype("<f4")
    Path(path).write_bytes(data.tobytes())


def read_labels(path: PathLike) -> np.ndarray:
    """One byte per point: 0 scene, 1 snow."""
    return np.frombuffer(Path(path).read_bytes(), dtype=np.uint8).copy()


def write_labels(path: PathLike, labels: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(labels, dtype=np.uint8).tobytes())


def format_pose(pose: Pose) -> str:
    # 17 significant digits round-trip a float64 exactly
    return " ".join(f"{v:.17g}" for v in pose.matrix[:3].ravel())


def parse_pose(line: str, lineno: int = 0) -> Pose:
    tokens = line.split()
    if len(tokens) != 12:
        raise MalformedFile(f"line {lineno}: expected 12 numbers, got {len(tokens)}")
    try:
        m = np.array([float(t) for t in tokens]).reshape(3, 4)
    except ValueError as exc:
        raise MalformedFile(f"line {lineno}: {exc}") from None
    if not np.all(np.isfinite(m)):
        raise MalformedFile(f"line {lineno}: non-finite value")
    R = m[:, :3]
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > 1e-3:
        log.warning("line %d: rotation off orthogonality by %.3g; projecting", lineno, err)
    return Pose(project_to_rotation(R), m[:, 3])


def read_pose_file(path: PathLike) -> Trajectory:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                poses.append(parse_pose(line, lineno))
    return Trajectory(poses)


def write_pose_file(path: PathLike, traj) -> None:
    poses = traj.poses if isinstance(traj, Trajectory) else traj
    with open(path, "w") as fh:
        for pose in poses:
            fh.write(format_pose(pose) + "\n")


def list_frames(directory: PathLike) -> list[Path]:
    """Sorted ``*.bin`` scans in ``directory`` (or its ``velodyne`` subfolder)."""
    d = Path(directory)
    if (d / "velodyne").is_dir():
        d = d / "velodyne"
    return sorted(d.glob("*.bin"))
