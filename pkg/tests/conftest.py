import functools

import numpy as np
import pytest

from snowlo.cloud import PointCloud, build_pyramid, estimate_normals, preprocess
from snowlo.pose import Pose
from snowlo.synth import SceneConfig, apply_rigid, generate_scene, make_sequence, street_scene


@functools.lru_cache(maxsize=None)
def street_cloud(seed: int = 0, n: int = 8192) -> PointCloud:
    """One preprocessed street scan with ``n`` points and valid normals where possible."""
    scene = SceneConfig(street_scene(120.0, seed=seed), max_range=60.0, fov_up_deg=10.0,
                        seed=seed)
    raw = generate_scene(scene, Pose.from_rotvec([0, 0, 0.05], (20.0, 0.0, 0.0)))
    cloud = preprocess(raw, seed=seed)
    assert len(cloud) >= n
    if len(cloud) > n:
        cloud = cloud.select(np.arange(n))
    return cloud.with_normals(estimate_normals(cloud))


def random_pose(rng, max_deg: float, max_t: float) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0, max_deg))
    t = rng.normal(size=3)
    t *= rng.uniform(0, max_t) / np.linalg.norm(t)
    return Pose.from_rotvec(axis * angle, t)


def scene_pair(G: Pose, sigma: float = 0.0, seed: int = 0, scene_seed: int = 0):
    """Source pyramid P and target pyramid Q = G P, sharing FPS indices.

    With ``sigma`` both clouds get independent position noise and fresh normals.
    Registering source onto target recovers ``G``.
    """
    src = street_cloud(scene_seed)
    tgt = apply_rigid(src, G, sigma, seed=2 * seed + 1)
    if sigma > 0:
        src = apply_rigid(src, Pose.identity(), sigma, seed=2 * seed)
        src = src.with_normals(estimate_normals(src))
        tgt = tgt.with_normals(estimate_normals(tgt))
    pyr_src = build_pyramid(src, seed=seed)
    levels = tuple(tgt.select(pyr_src.to_l0(k)) for k in range(len(pyr_src.levels)))
    pyr_tgt = type(pyr_src)(levels, pyr_src.fps_indices)
    return pyr_src, pyr_tgt


@functools.lru_cache(maxsize=None)
def cached_sequence(n_frames: int, snow_fraction: float, seed: int, noise_sigma: float = 0.01):
    return make_sequence(n_frames, snow_fraction=snow_fraction, seed=seed,
                         noise_sigma=noise_sigma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
