"""Weighted point-to-plane registration, coarse to fine over a pyramid.

Correspondences are nearest neighbours in the target (restricted to points
with a valid normal) found after warping the source with the current pose.
Each solve linearises the rotation, so a level runs several
correspondence/solve rounds and composes the increments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .cloud import PointCloud, Pyramid, SpatialIndex
from .errors import DegenerateGeometry, InsufficientCorrespondences, NoResidual
from .pose import Pose, compose, project_to_rotation

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12


@dataclass
class RegistrationConfig:
    inner_iters: int = 5
    # gating distance per level, l0 first; l3 must exceed the inter-frame motion
    max_dist: tuple = (0.3, 0.4, 0.6, 3.0)
    min_pairs: int = 10
    converge_tol: float = 1e-9
    # "same": source level k is matched against target level k;
    # "finest": every source level is matched against target l0
    target_level: str = "same"
    # a coarse level (l1..l3) without enough weighted pairs is skipped and the
    # current pose is carried to the next finer level; l0 always must succeed
    skip_sparse_levels: bool = True


class PlaneTarget:
    """Target points with valid normals, indexed for nearest-neighbour lookup.

    With ``weights`` given, zero-weight target points (masked snow) are left
    out of the index as well.
    """

    def __init__(self, cloud: PointCloud, weights: Optional[np.ndarray] = None):
        if cloud.normals is None:
            raise ValueError("target cloud has no normals")
        self.cloud = cloud
        keep = cloud.normal_valid
        if weights is not None:
            keep = keep & (np.asarray(weights) > 0)
        self.valid_idx = np.nonzero(keep)[0]
        self.index = SpatialIndex(cloud.positions[self.valid_idx]) if len(self.valid_idx) else None

    @property
    def points(self) -> np.ndarray:
        return self.cloud.positions

    @property
    def normals(self) -> np.ndarray:
        return self.cloud.normals

    def nearest(self, queries: np.ndarray, max_dist: Optional[float] = None):
        """Nearest valid-normal target for each query: ``(target index, distance)``.

        Queries with nothing within ``max_dist`` get index -1 and distance inf.
        """
        if self.index is None:
            m = len(queries)
            return np.full(m, -1, np.int64), np.full(m, np.inf)
        idx, dist = self.index.query(queries, 1, max_dist)
        idx = idx[:, 0]
        return np.where(idx >= 0, self.valid_idx[idx], -1), dist[:, 0]


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    src_idx: np.ndarray
    tgt_idx: np.ndarray
    target_normals: np.ndarray
    weights: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.src_idx)


def _as_points(x: Union[PointCloud, np.ndarray]) -> np.ndarray:
    return x.positions if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)


def find_correspondences(src, target: PlaneTarget, weights=None, max_dist: float = 1.0,
                         min_pairs: int = 10) -> CorrespondenceSet:
    """Pair every positively weighted source point with its gated nearest target."""
    pts = _as_points(src)
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=np.float64)
    active = np.nonzero(w > 0)[0]
    tgt_idx, dist = target.nearest(pts[active], max_dist)
    ok = dist <= max_dist
    src_idx, tgt_idx, dist = active[ok], tgt_idx[ok], dist[ok]
    if len(src_idx) < min_pairs:
        raise InsufficientCorrespondences(
            f"{len(src_idx)} pairs within {max_dist} m (need {min_pairs})", len(src_idx))
    return CorrespondenceSet(src_idx, tgt_idx, target.normals[tgt_idx], w[src_idx], dist)


def solve_weighted_point_to_plane(corr: CorrespondenceSet, src, tgt,
                                  min_pairs: int = 10) -> Pose:
    """One linearised weighted point-to-plane step.

    Minimises ``sum w ((R p + t - q) . n)^2`` with ``R ~ I + [omega]x``; the
    6x6 normal equations are solved by SVD and ``omega`` is mapped through the
    exponential map. Points are centred on their weighted centroid first to
    keep the system well conditioned.
    """
    keep = corr.weights > 0
    if np.count_nonzero(keep) < min_pairs:
        raise InsufficientCorrespondences(
            f"{np.count_nonzero(keep)} weighted pairs (need {min_pairs})",
            int(np.count_nonzero(keep)))
    w = corr.weights[keep]
    p = _as_points(src)[corr.src_idx[keep]]
    q = _as_points(tgt)[corr.tgt_idx[keep]]
    n = corr.target_normals[keep]

    c = (w @ p) / w.sum()
    pc = p - c
    A = np.hstack([np.cross(pc, n), n])
    b = -np.einsum("ij,ij->i", p - q, n)
    Aw = A * w[:, None]
    H = Aw.T @ A
    g = Aw.T @ b
    U, s, Vt = np.linalg.svd(H)
    if s[-1] <= 0 or s[0] / s[-1] > MAX_CONDITION:
        raise DegenerateGeometry(
            f"point-to-plane system is singular (condition {s[0] / max(s[-1], 1e-300):.3g})")
    x = Vt.T @ ((U.T @ g) / s)
    R = project_to_rotation(Rotation.from_rotvec(x[:3]).as_matrix())
    return Pose(R, x[3:] + c - R @ c)


def warp(cloud: PointCloud, pose: Pose) -> PointCloud:
    normals = None if cloud.normals is None else cloud.normals @ pose.R.T
    return PointCloud(pose.apply(cloud.positions), cloud.intensities, normals, cloud.labels)


def point_to_plane_residual(src, target: Union[PlaneTarget, PointCloud], pose: Pose,
                            weights=None, max_dist: Optional[float] = None) -> float:
    """Weighted mean squared point-to-plane distance after applying ``pose``."""
    if isinstance(target, PointCloud):
        target = PlaneTarget(target)
    pts = pose.apply(_as_points(src))
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=np.float64)
    active = np.nonzero(w > 0)[0]
    if len(active) == 0 or target.index is None:
        raise NoResidual("no weighted points or no valid target normals")
    ti, dist = target.nearest(pts[active], max_dist)
    if max_dist is not None:
        ok = dist <= max_dist
        active, ti = active[ok], ti[ok]
        if len(active) == 0:
            raise NoResidual(f"no pairs within {max_dist} m")
    r = np.einsum("ij,ij->i", pts[active] - target.points[ti], target.normals[ti])
    wa = w[active]
    return float(np.sum(wa * r * r) / np.sum(wa))


def align_level(src_points: np.ndarray, target: PlaneTarget, weights, pose: Pose,
                max_dist: float, iters: int, min_pairs: int = 10,
                tol: float = 1e-9) -> tuple[Pose, int]:
    """Iterate correspondence search and solve at one resolution.

    Returns the refined pose and the pair count of the last round.
    """
    n_pairs = 0
    for _ in range(iters):
        moved = pose.apply(src_points)
        corr = find_correspondences(moved, target, weights, max_dist, min_pairs)
        n_pairs = len(corr)
        delta = solve_weighted_point_to_plane(corr, moved, target.points, min_pairs)
        pose = compose(delta, pose)
        if np.linalg.norm(delta.t) < tol and delta.rotation_angle() < tol:
            break
    return pose, n_pairs


@dataclass
class RegistrationResult:
    pose: Pose
    residuals: dict = field(default_factory=dict)  # level -> residual, in solve order
    pairs: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)


def register_coarse_to_fine(pyr_src: Pyramid, pyr_tgt: Pyramid,
                            weights: Optional[Sequence[np.ndarray]] = None,
                            cfg: Optional[RegistrationConfig] = None,
                            init: Optional[Pose] = None,
                            targets: Optional[Sequence[PlaneTarget]] = None) -> RegistrationResult:
    """Estimate the pose mapping the source cloud onto the target.

    Solves at the coarsest level first, then refines with residual poses at
    each finer level. ``targets`` may pass prebuilt per-level
    :class:`PlaneTarget` objects for the target pyramid.
    """
    cfg = cfg or RegistrationConfig()
    n_levels = len(pyr_src.levels)
    if targets is None:
        if cfg.target_level == "finest":
            targets = [PlaneTarget(pyr_tgt.levels[0])] * n_levels
        else:
            targets = [PlaneTarget(lv) for lv in pyr_tgt.levels]
    pose = init or Pose.identity()
    result = RegistrationResult(pose)
    carried = 0.0  # widest gate among skipped coarser levels
    for level in range(n_levels - 1, -1, -1):
        src = pyr_src.levels[level].positions
        w = None if weights is None else weights[level]
        gate = cfg.max_dist[level]
        # a level taking over from skipped coarser ones first runs with their gate
        gates = (carried, gate) if carried > gate else (gate,)
        try:
            pose_l = pose
            for g in gates:
                pose_l, n_pairs = align_level(src, targets[level], w, pose_l, g,
                                              cfg.inner_iters, cfg.min_pairs, cfg.converge_tol)
        except (InsufficientCorrespondences, DegenerateGeometry) as exc:
            if level > 0 and cfg.skip_sparse_levels:
                log.debug("skipping level l%d: %s", level, exc)
                result.pairs[level] = getattr(exc, "n_pairs", 0)
                result.skipped.append(level)
                carried = max(carried, gate)
                continue
            if isinstance(exc, DegenerateGeometry):
                raise DegenerateGeometry(f"level l{level}: {exc}") from exc
            raise InsufficientCorrespondences(f"level l{level}: {exc}", exc.n_pairs, level) from exc
        pose, carried = pose_l, 0.0
        result.pairs[level] = n_pairs
        result.residuals[level] = point_to_plane_residual(src, targets[level], pose, w, gate)
    result.pose = pose
    return result
