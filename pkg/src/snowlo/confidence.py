"""Per-point registration weights.

The final weight of an l0 point is the product of its spatial score, its
intensity-mask bit and a point-wise confidence from a :class:`PointPredictor`.
Weights are computed once on l0 and looked up for the coarser levels through
the FPS index chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numba
import numpy as np

from .cloud import Pyramid
from .errors import InvalidArgument
from .psm import PatchSet, scatter_max

DENSITY_NEIGHBORS = 8


class PointPredictor(Protocol):
    def __call__(self, positions: np.ndarray, intensities: np.ndarray,
                 ranges: np.ndarray) -> np.ndarray:
        """Confidence in [0, 1] for each member; inputs are ``(S, M, ...)``."""
        ...


@numba.njit(cache=True)
def _mean_near_distance(positions, kn):
    """Mean distance from each member to its ``kn`` nearest patch mates."""
    S, M, _ = positions.shape
    out = np.empty((S, M))
    best = np.empty(kn)
    for s in range(S):
        for i in range(M):
            best[:] = np.inf
            for j in range(M):
                if j == i:
                    continue
                dx = positions[s, i, 0] - positions[s, j, 0]
                dy = positions[s, i, 1] - positions[s, j, 1]
                dz = positions[s, i, 2] - positions[s, j, 2]
                dist = np.sqrt(dx * dx + dy * dy + dz * dz)
                if dist < best[kn - 1]:
                    # insertion into the sorted shortlist
                    t = kn - 1
                    while t > 0 and best[t - 1] > dist:
                        best[t] = best[t - 1]
                        t -= 1
                    best[t] = dist
            acc = 0.0
            for t in range(kn):
                acc += best[t]
            out[s, i] = acc / kn
    return out


def density_intensity_predictor(positions, intensities, ranges):
    """Down-weight members that are locally sparse or darker than the patch median."""
    S, M, _ = positions.shape
    if M > DENSITY_NEIGHBORS:
        dk = _mean_near_distance(np.ascontiguousarray(positions, dtype=np.float64),
                                 DENSITY_NEIGHBORS)
        dbar = dk.mean(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            density = np.where(dbar > 0, np.exp(-dk / np.where(dbar > 0, dbar, 1.0)), 1.0)
        density = np.clip(density, 0.0, 1.0)
    else:
        density = np.ones((S, M))
    med = np.median(intensities, axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(med > 0, intensities / np.where(med > 0, med, 1.0), 1.0)
    return density * np.minimum(1.0, ratio)


def uniform_predictor(positions, intensities, ranges):
    return np.ones(positions.shape[:2])


PREDICTORS = {"default": density_intensity_predictor, "uniform": uniform_predictor}


def default_point_weights(patches: PatchSet, positions: np.ndarray, intensities: np.ndarray,
                          predictor: PointPredictor = density_intensity_predictor) -> np.ndarray:
    """Run ``predictor`` patch-wise and scatter back to l0 by maximum.

    Points outside every patch get weight 1 (no evidence either way).
    """
    members = patches.member_indices
    pos = np.asarray(positions, dtype=np.float64)
    inten = np.asarray(intensities, dtype=np.float64)
    wpp = predictor(pos[members], inten[members], patches.spherical[..., 0])
    if wpp.shape != members.shape:
        raise InvalidArgument(f"predictor returned shape {wpp.shape}, expected {members.shape}")
    return np.clip(scatter_max(wpp, members, len(pos), 1.0), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class WeightVector:
    w: np.ndarray
    per_level: tuple = ()


def combine_weights(sp, mask, wpp) -> WeightVector:
    """Element-wise product ``sp * mask * wpp``.

    ``sp`` and ``mask`` may be the :class:`SpatialScores` /
    :class:`IntensityMask` objects or plain arrays.
    """
    sp = np.asarray(getattr(sp, "sp", sp), dtype=np.float64)
    m = np.asarray(getattr(mask, "bits", mask), dtype=np.float64)
    wpp = np.asarray(wpp, dtype=np.float64)
    if not len(sp) == len(m) == len(wpp):
        raise InvalidArgument(f"length mismatch: {len(sp)}, {len(m)}, {len(wpp)}")
    return WeightVector(np.clip(sp * m * wpp, 0.0, 1.0))


def propagate_weights(w, pyramid: Pyramid) -> list:
    """l0 weights restricted to every pyramid level."""
    w0 = np.asarray(getattr(w, "w", w), dtype=np.float64)
    if len(w0) != len(pyramid.levels[0]):
        raise InvalidArgument("weights do not match pyramid l0")
    return [w0[pyramid.to_l0(k)] for k in range(len(pyramid.levels))]
