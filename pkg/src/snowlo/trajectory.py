"""Trajectories and KITTI odometry drift metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyBreakdown, InvalidArgument
from .pose import Pose, compose

LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


@dataclass
class Trajectory:
    """Absolute poses (world from sensor); frame 0 is the identity."""

    poses: list
    timestamps: Optional[list] = None

    def __len__(self) -> int:
        return len(self.poses)

    def relative(self) -> list:
        """Frame-to-frame poses ``P[k-1]^-1 P[k]``."""
        return [compose(a.inverse(), b) for a, b in zip(self.poses, self.poses[1:])]

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])

    def left_multiplied(self, g: Pose) -> "Trajectory":
        return Trajectory([compose(g, p) for p in self.poses], self.timestamps)


def accumulate(relative_poses: Sequence[Pose]) -> Trajectory:
    """Chain relative poses onto an identity start: ``A[k] = A[k-1] * rel[k]``."""
    poses = [Pose.identity()]
    for rel in relative_poses:
        poses.append(compose(poses[-1], rel))
    return Trajectory(poses)


@dataclass
class DriftMetrics:
    t_rel: float  # percent
    r_rel: float  # degrees per 100 m
    per_length: dict = field(default_factory=dict)  # L -> (t_rel %, r_rel deg/100m, count)
    n_segments: int = 0

    def rows(self):
        for length, (t, r, _) in sorted(self.per_length.items()):
            yield length, t, r


def _arc_length(traj: Trajectory) -> np.ndarray:
    steps = np.linalg.norm(np.diff(traj.positions(), axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _rotation_angle(R: np.ndarray) -> float:
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def kitti_metrics(gt: Trajectory, est: Trajectory, lengths: Sequence[float] = LENGTHS,
                  step: int = 1) -> DriftMetrics:
    """Average relative drift over all ``(start, length)`` subsequences.

    The end frame of a subsequence is the first frame whose ground-truth arc
    length from the start reaches ``length``. ``step`` thins the start frames
    (the KITTI devkit uses 10).
    """
    if len(gt) != len(est):
        raise InvalidArgument(f"trajectory lengths differ: {len(gt)} vs {len(est)}")
    if len(gt) < 2:
        raise InvalidArgument("need at least two poses")
    dist = _arc_length(gt)
    errs = {L: [] for L in lengths}
    for first in range(0, len(gt), step):
        for L in lengths:
            ahead = np.nonzero(dist[first:] - dist[first] >= L)[0]
            if len(ahead) == 0:
                continue
            last = first + int(ahead[0])
            gt_rel = compose(gt.poses[first].inverse(), gt.poses[last])
            est_rel = compose(est.poses[first].inverse(), est.poses[last])
            e = compose(gt_rel.inverse(), est_rel)
            errs[L].append((np.linalg.norm(e.t) / L, _rotation_angle(e.R) / L))
    all_errs = [x for v in errs.values() for x in v]
    if not all_errs:
        raise EmptyBreakdown(f"ground-truth path of {dist[-1]:.1f} m is shorter than {min(lengths)} m")
    arr = np.array(all_errs)
    per_length = {
        L: (float(np.mean([t for t, _ in v]) * 100), float(np.degrees(np.mean([r for _, r in v])) * 100), len(v))
        for L, v in errs.items() if v
    }
    return DriftMetrics(float(arr[:, 0].mean() * 100), float(np.degrees(arr[:, 1].mean()) * 100),
                        per_length, len(arr))


def write_drift_csv(path, metrics: DriftMetrics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["length_m", "t_rel_pct", "r_rel_deg_per_100m"])
        for length, t, r in metrics.rows():
            w.writerow([length, f"{t:.6f}", f"{r:.6f}"])
