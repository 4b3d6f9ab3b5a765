"""Synthetic LiDAR scans with labelled snow.

Scenes are sets of finite rectangles ray-cast with a spinning multi-ring
scan pattern. Snow is appended in two populations: a dense cluster in a ball
around the sensor and sparse flakes in a far range shell, both with
intensities in a low band that lies below the scene band.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .cloud import SCENE, SNOW, PointCloud
from .errors import EmptyScene, InvalidArgument
from .pose import Pose



@dataclass(frozen=True)
class Rect:
    """Finite plane: ``center + a*u + b*v`` with ``|a| <= half_u``, ``|b| <= half_v``."""

    center: tuple
    u: tuple
    v: tuple
    half_u: float
    half_v: float

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)


def box(center: Sequence[float], size: Sequence[float]) -> list[Rect]:
    """The six faces of an axis-aligned box."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(size, dtype=float) / 2
    e = np.eye(3)
    faces = []
    for ax in range(3):
        a, b = [i for i in range(3) if i != ax]
        for sign in (-1, 1):
            fc = c.copy()
            fc[ax] += sign * h[ax]
            faces.append(Rect(tuple(fc), tuple(e[a]), tuple(e[b]), h[a], h[b]))
    return faces


def ground(z: float, half: float = 200.0, center=(0.0, 0.0)) -> Rect:
    return Rect((center[0], center[1], z), (1, 0, 0), (0, 1, 0), half, half)


@dataclass
class SceneConfig:
    primitives: list = field(default_factory=list)
    rings: int = 64
    azimuth_steps: int = 1024
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    max_range: float = 120.0
    intensity_range: tuple = (5.0, 255.0)
    seed: int = 0

    def __post_init__(self):
        if not self.primitives:
            raise InvalidArgument("scene needs at least one primitive")


@dataclass
class SnowConfig:
    near_count: int = 0
    near_extent: float = 2.0
    near_band: tuple = (0.0, 2.0)
    far_count: int = 0
    far_range: tuple = (8.0, 30.0)
    far_band: tuple = (0.0, 2.0)
    far_elevation_deg: tuple = (-20.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if self.near_count and self.far_count and self.near_extent >= self.far_range[0]:
            raise InvalidArgument("near cluster extent must be below the far range band")


def scan_directions(cfg: SceneConfig) -> np.ndarray:
    """Unit ray directions in the sensor frame, ring-major."""
    elev = np.radians(np.linspace(cfg.fov_down_deg, cfg.fov_up_deg, cfg.rings))
    azim = -np.pi + 2 * np.pi * (np.arange(cfg.azimuth_steps) + 0.5) / cfg.azimuth_steps
    el, az = np.meshgrid(elev, azim, indexing="ij")
    ce = np.cos(el)
    return np.column_stack([(ce * np.cos(az)).ravel(), (ce * np.sin(az)).ravel(),
                            np.sin(el).ravel()])


def cast_rays(origin: np.ndarray, dirs: np.ndarray, primitives: Sequence[Rect],
              max_range: float) -> np.ndarray:
    """Distance to the first rectangle hit along each ray (inf if none)."""
    origin = np.asarray(origin, dtype=float)
    # drop rectangles entirely beyond max_range
    primitives = [p for p in primitives
                  if np.linalg.norm(np.subtract(p.center, origin)) - np.hypot(p.half_u, p.half_v)
                  <= max_range]
    if not primitives:
        return np.full(len(dirs), np.inf)
    C = np.array([p.center for p in primitives], dtype=float)
    U = np.array([p.u for p in primitives], dtype=float)
    V = np.array([p.v for p in primitives], dtype=float)
    N = np.cross(U, V)
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    hu = np.array([p.half_u for p in primitives])
    hv = np.array([p.half_v for p in primitives])
    oc = origin - C  # (P, 3)
    num = -np.einsum("pc,pc->p", oc, N)
    ou = np.einsum("pc,pc->p", oc, U)
    ov = np.einsum("pc,pc->p", oc, V)
    return _first_hits(np.ascontiguousarray(dirs, dtype=np.float64), N, U, V, num, ou, ov,
                       hu, hv, float(max_range))


@numba.njit(cache=True)
def _first_hits(dirs, N, U, V, num, ou, ov, hu, hv, max_range):
    out = np.full(dirs.shape[0], np.inf)
    for r in range(dirs.shape[0]):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = np.inf
        for p in range(N.shape[0]):
            den = dx * N[p, 0] + dy * N[p, 1] + dz * N[p, 2]
            if abs(den) <= 1e-12:
                continue
            s = num[p] / den
            if s <= 1e-6 or s > max_range or s >= best:
                continue
            a = ou[p] + s * (dx * U[p, 0] + dy * U[p, 1] + dz * U[p, 2])
            if abs(a) > hu[p]:
                continue
            b = ov[p] + s * (dx * V[p, 0] + dy * V[p, 1] + dz * V[p, 2])
            if abs(b) <= hv[p]:
                best = s
        out[r] = best
    return out


def generate_scene(cfg: SceneConfig, sensor_pose: Optional[Pose] = None,
                   seed: Optional[int] = None) -> PointCloud:
    """Ray-cast one scan from ``sensor_pose`` (world from sensor); points in sensor frame."""
    pose = sensor_pose or Pose.identity()
    dirs = scan_directions(cfg)
    dist = cast_rays(pose.t, dirs @ pose.R.T, cfg.primitives, cfg.max_range)
    hit = np.isfinite(dist)
    if not np.any(hit):
        raise EmptyScene("no ray hit any primitive")
    pts = dirs[hit] * dist[hit, None]
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    lo, hi = cfg.intensity_range
    inten = rng.uniform(lo, hi, size=len(pts))
    return PointCloud(pts, inten, None, np.full(len(pts), SCENE, dtype=np.uint8))


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def inject_snow(cloud: PointCloud, cfg: SnowConfig) -> PointCloud:
    """Append near-cluster and far-flake snow points labelled :data:`SNOW`."""
    if cfg.near_count == 0 and cfg.far_count == 0:
        return cloud
    rng = np.random.default_rng(cfg.seed)
    near_r = cfg.near_extent * rng.uniform(size=cfg.near_count) ** (1 / 3)
    near_r = np.maximum(near_r, 1e-3)
    near = _unit_vectors(rng, cfg.near_count) * near_r[:, None]
    near_i = rng.uniform(*cfg.near_band, size=cfg.near_count)

    r_lo, r_hi = cfg.far_range
    far_r = rng.uniform(r_lo, r_hi, size=cfg.far_count)
    az = rng.uniform(-np.pi, np.pi, size=cfg.far_count)
    el = np.radians(rng.uniform(*cfg.far_elevation_deg, size=cfg.far_count))
    far = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    far *= far_r[:, None]
    far_i = rng.uniform(*cfg.far_band, size=cfg.far_count)

    labels = cloud.labels if cloud.labels is not None else np.full(len(cloud), SCENE, np.uint8)
    n_snow = cfg.near_count + cfg.far_count
    return PointCloud(
        np.vstack([cloud.positions, near, far]),
        np.concatenate([cloud.intensities, near_i, far_i]),
        None,
        np.concatenate([labels, np.full(n_snow, SNOW, dtype=np.uint8)]),
    )


def snow_for_fraction(n_scene: int, fraction: float, near_share: float = 0.8,
                      seed: int = 0, **kw) -> SnowConfig:
    """Snow config making ``fraction`` of the merged cloud snow."""
    if not 0 <= fraction < 1:
        raise InvalidArgument("snow fraction must lie in [0, 1)")
    total = int(round(n_scene * fraction / (1 - fraction)))
    near = int(round(total * near_share))
    return SnowConfig(near_count=near, far_count=total - near, seed=seed, **kw)


def apply_rigid(cloud: PointCloud, pose: Pose, noise_sigma: float = 0.0,
                seed: int = 0) -> PointCloud:
    """Rigidly move a cloud and add isotropic Gaussian position noise."""
    pts = pose.apply(cloud.positions)
    if noise_sigma > 0:
        pts = pts + np.random.default_rng(seed).normal(scale=noise_sigma, size=pts.shape)
    normals = None if cloud.normals is None else cloud.normals @ pose.R.T
    return PointCloud(pts, cloud.intensities, normals, cloud.labels)


# ----------------------------------------------------------------------------
# canned scenes


def box_room(size=(20.0, 14.0, 6.0), sensor_height: float = 1.7) -> list[Rect]:
    """Inward-facing room walls with the floor ``sensor_height`` below the origin."""
    sx, sy, sz = size
    return box((0.0, 0.0, sz / 2 - sensor_height), (sx, sy, sz))


def street_scene(length: float = 200.0, width: float = 16.0, sensor_height: float = 1.73,
                 seed: int = 0) -> list[Rect]:
    """A street along +x: ground, broken facades on both sides and scattered boxes."""
    rng = np.random.default_rng(seed)
    prims = [ground(-sensor_height, half=length, center=(length / 2, 0.0))]
    z0 = -sensor_height
    for side in (-1, 1):
        x = -30.0
        while x < length + 30:
            w = rng.uniform(8, 20)
            depth = rng.uniform(4, 10)
            h = rng.uniform(5, 15)
            setback = rng.uniform(0, 3)
            y = side * (width / 2 + setback + depth / 2)
            prims += box((x + w / 2, y, z0 + h / 2), (w, depth, h))
            x += w + rng.uniform(1, 6)
    for _ in range(int(length / 2.5)):
        # parked cars, kerbside clutter and poles
        x = rng.uniform(-20, length + 20)
        y = rng.choice([-1, 1]) * rng.uniform(2.5, width / 2 - 0.5)
        kind = rng.integers(3)
        if kind == 0:
            s = (rng.uniform(3.5, 4.8), rng.uniform(1.6, 1.9), rng.uniform(1.3, 1.6))
        elif kind == 1:
            s = (rng.uniform(0.4, 2.5), rng.uniform(0.4, 1.5), rng.uniform(0.5, 1.2))
        else:
            s = (0.3, 0.3, rng.uniform(3, 6))
        prims += box((x, y, z0 + s[2] / 2), s)
    for _ in range(int(length / 10)):
        # sloped awnings over the pavement
        x = rng.uniform(0, length)
        side = rng.choice([-1, 1])
        tilt = np.radians(rng.uniform(15, 35))
        v = (0.0, -side * np.cos(tilt), -np.sin(tilt))
        prims.append(Rect((x, side * (width / 2 - 0.5), z0 + rng.uniform(2.5, 3.5)),
                          (1.0, 0.0, 0.0), v, rng.uniform(2, 5), 1.2))
    return prims


def trajectory(n_frames: int, step: float = 2.5, yaw_amp_deg: float = 5.0,
               wavelength: float = 60.0, seed: int = 0) -> list[Pose]:
    """Forward motion along +x weaving gently about the street axis.

    Heading is a sinusoid of ``wavelength`` meters, so the lateral offset stays
    within about ``amp * wavelength / (2 pi)``. Poses are in the street frame;
    frame 0 sits at the origin but is generally not heading-aligned.
    """
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi)
    yaw = np.radians(yaw_amp_deg) * np.sin(
        phase + 2 * np.pi * step * np.arange(n_frames) / wavelength)
    poses, pos = [], np.zeros(3)
    for k in range(n_frames):
        if k:
            h = 0.5 * (yaw[k] + yaw[k - 1])
            pos = pos + step * np.array([np.cos(h), np.sin(h), 0.0])
        poses.append(Pose.from_rotvec([0.0, 0.0, yaw[k]], pos))
    return poses


@dataclass
class SyntheticSequence:
    frames: list
    poses: list  # world from sensor, re-based so frame 0 = identity


def make_sequence(n_frames: int = 50, step: float = 2.5, snow_fraction: float = 0.0,
                  seed: int = 0, scene: Optional[SceneConfig] = None,
                  noise_sigma: float = 0.0, snow_kw: Optional[dict] = None) -> SyntheticSequence:
    """Frames of a drive down :func:`street_scene` with optional snow.

    ``snow_kw`` is passed on to :func:`snow_for_fraction`.
    """
    poses = trajectory(n_frames, step, seed=seed)
    if scene is None:
        length = step * n_frames + 40
        # upper field of view widened so frames keep >= 8192 points after preprocessing
        scene = SceneConfig(street_scene(length, seed=seed), max_range=60.0,
                            fov_up_deg=10.0, seed=seed)
    frames = []
    for k, pose in enumerate(poses):
        fseed = seed * 100003 + k
        frame = generate_scene(scene, pose, seed=fseed)
        if noise_sigma > 0:
            frame = apply_rigid(frame, Pose.identity(), noise_sigma, seed=fseed)
        if snow_fraction > 0:
            frame = inject_snow(frame, snow_for_fraction(len(frame), snow_fraction, seed=fseed,
                                                         **(snow_kw or {})))
        frames.append(frame)
    base = poses[0].inverse()
    # frame 0 is set exactly rather than via base @ poses[0], which rounds
    return SyntheticSequence(frames, [Pose.identity()] + [base @ p for p in poses[1:]])
