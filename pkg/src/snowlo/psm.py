"""Patch Spatial Measure.

Every coarsest-level point (superpoint) gathers its ``M`` nearest finest-level
points into a patch. A patch is scored with Global Moran's I of the member
ranges, pairs weighted by inverse squared angular separation, and the score
is mapped to [0, 1] and spread over the members. Coherent surfaces score
high; scattered returns (snowflakes, sparse far clutter) score low.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numba
import numpy as np

from .cloud import Pyramid, SpatialIndex, cartesian_to_spherical
from .errors import InvalidArgument

EPS_ANG = 1e-8
UNCOVERED_SCORE = 0.5

Normalizer = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PatchSet:
    superpoint_indices: np.ndarray  # (S,) into l3
    member_indices: np.ndarray  # (S, M) into l0
    spherical: np.ndarray  # (S, M, 3) as (r, theta, phi)

    @property
    def M(self) -> int:
        return self.member_indices.shape[1]

    def __len__(self) -> int:
        return len(self.superpoint_indices)


@dataclass(frozen=True, eq=False)
class SpatialScores:
    sa: np.ndarray  # per patch, in [-1, 1]
    sp: np.ndarray  # per l0 point, in [0, 1]


def segment_patches(pyramid: Pyramid, M: int = 64,
                    index: Optional[SpatialIndex] = None) -> PatchSet:
    l0, l3 = pyramid.levels[0], pyramid.levels[-1]
    if M > len(l0):
        raise InvalidArgument(f"patch size {M} exceeds the {len(l0)} l0 points")
    if M < 1:
        raise InvalidArgument("patch size must be positive")
    index = index or SpatialIndex(l0)
    members, _ = index.query(l3.positions, M)
    sph = cartesian_to_spherical(l0.positions)
    return PatchSet(np.arange(len(l3)), members, sph[members])


@numba.njit(cache=True)
def _moran_sums(r, theta, phi, eps_ang):
    """Per patch: weighted cross-product sum and total weight over pairs k != j."""
    S, M = r.shape
    num = np.zeros(S)
    wsum = np.zeros(S)
    z = np.empty(M)
    for s in range(S):
        mean = 0.0
        for k in range(M):
            mean += r[s, k]
        mean /= M
        for k in range(M):
            z[k] = r[s, k] - mean
        acc = 0.0
        tot = 0.0
        for k in range(M):
            for j in range(k + 1, M):
                dth = theta[s, k] - theta[s, j]
                # azimuth wraps at +-pi
                dth = (dth + np.pi) % (2 * np.pi) - np.pi
                dph = phi[s, k] - phi[s, j]
                w = 1.0 / (dth * dth + dph * dph + eps_ang)
                acc += w * z[k] * z[j]
                tot += w
        num[s] = 2.0 * acc
        wsum[s] = 2.0 * tot
    return num, wsum


def morans_i_batch(spherical: np.ndarray, eps_ang: float = EPS_ANG) -> np.ndarray:
    """Moran's I for a stack of patches, ``spherical`` shaped ``(S, M, 3)``."""
    sph = np.asarray(spherical, dtype=np.float64)
    if sph.ndim != 3 or sph.shape[-1] != 3:
        raise InvalidArgument("expected (patches, members, 3) spherical array")
    M = sph.shape[1]
    if M < 2:
        raise InvalidArgument("Moran's I needs at least 2 members")
    r = np.ascontiguousarray(sph[..., 0])
    num, wsum = _moran_sums(r, np.ascontiguousarray(sph[..., 1]),
                            np.ascontiguousarray(sph[..., 2]), float(eps_ang))
    z = r - r.mean(axis=1, keepdims=True)
    den = np.sum(z * z, axis=1)
    flat = np.ptp(r, axis=1) <= 1e-12
    safe = np.where(flat, 1.0, den)
    sa = (M / wsum) * num / safe
    sa[flat] = 1.0
    return np.clip(sa, -1.0, 1.0)


def morans_i(patch: np.ndarray, eps_ang: float = EPS_ANG) -> float:
    """Moran's I of one patch given as ``(M, 3)`` rows of ``(r, theta, phi)``.

    Members at a common range (no variance) return +1.
    """
    sph = np.asarray(patch, dtype=np.float64)
    return float(morans_i_batch(sph[None], eps_ang)[0])


def normalize_scores(sa: np.ndarray) -> np.ndarray:
    """Affine map of [-1, 1] onto [0, 1]."""
    return np.clip((np.asarray(sa, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def scatter_max(values: np.ndarray, member_indices: np.ndarray, n: int,
                fill: float) -> np.ndarray:
    """Per-point maximum over all patches covering it; ``fill`` if uncovered.

    ``values`` is either per patch ``(S,)`` or per member ``(S, M)``.
    """
    vals = np.broadcast_to(
        values[:, None] if values.ndim == 1 else values, member_indices.shape)
    out = np.full(n, -np.inf)
    np.maximum.at(out, member_indices.ravel(), vals.ravel())
    out[np.isneginf(out)] = fill
    return out


def score_cloud(pyramid: Pyramid, M: int = 64, eps_ang: float = EPS_ANG,
                normalizer: Normalizer = normalize_scores,
                patches: Optional[PatchSet] = None) -> SpatialScores:
    patches = patches or segment_patches(pyramid, M)
    sa = morans_i_batch(patches.spherical, eps_ang)
    sp_patch = normalizer(sa)
    sp = scatter_max(sp_patch, patches.member_indices, len(pyramid.levels[0]),
                     UNCOVERED_SCORE)
    return SpatialScores(sa, sp)
