"""Classical snow/outlier filters used as comparison baselines.

Neighbour counts and distances are evaluated exactly (tree candidates are
re-measured) so results do not depend on k-d tree rounding at radius
boundaries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cloud import SNOW, PointCloud, SpatialIndex
from .errors import InvalidArgument
from .snowmask import snow_mask


@dataclass
class FilterReport:
    kept_indices: np.ndarray
    removed_indices: np.ndarray
    runtime_ms: float
    precision: Optional[float] = None
    recall: Optional[float] = None

    @property
    def n_removed(self) -> int:
        return len(self.removed_indices)

    def as_dict(self) -> dict:
        return {
            "kept": len(self.kept_indices),
            "removed": self.n_removed,
            "runtime_ms": round(self.runtime_ms, 3),
            "precision": self.precision,
            "recall": self.recall,
        }


def _report(cloud: PointCloud, remove: np.ndarray, t0: float) -> FilterReport:
    runtime = (time.perf_counter() - t0) * 1e3
    kept = np.nonzero(~remove)[0]
    removed = np.nonzero(remove)[0]
    precision = recall = None
    if cloud.labels is not None:
        snow = cloud.labels == SNOW
        hits = int(np.count_nonzero(remove & snow))
        precision = hits / len(removed) if len(removed) else None
        recall = hits / int(snow.sum()) if snow.any() else None
    return FilterReport(kept, removed, runtime, precision, recall)


def _pairs_within(pts: np.ndarray, radius: float):
    """All index pairs ``i < j`` with their exact distance, up to ``radius``."""
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius * (1 + 1e-9) + 1e-12, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    diff = pts[i] - pts[j]
    return i, j, np.sqrt(np.sum(diff * diff, axis=-1))


def _mean_knn_distance(pts: np.ndarray, k: int) -> np.ndarray:
    _, dist = SpatialIndex(pts).query(pts, k + 1)
    return dist[:, 1:].mean(axis=1)


def ror(cloud: PointCloud, radius: float = 0.5, min_neighbors: int = 3) -> FilterReport:
    """Radius outlier removal: drop points with too few neighbours within ``radius``."""
    if radius <= 0:
        raise InvalidArgument("radius must be positive")
    t0 = time.perf_counter()
    pts = cloud.positions
    n = len(pts)
    if n == 0:
        return _report(cloud, np.zeros(0, bool), t0)
    i, j, d = _pairs_within(pts, radius)
    ok = d <= radius
    count = np.bincount(i[ok], minlength=n) + np.bincount(j[ok], minlength=n)
    return _report(cloud, count < min_neighbors, t0)


def sor(cloud: PointCloud, k: int = 10, std_mult: float = 1.0) -> FilterReport:
    """Statistical outlier removal on the mean distance to the ``k`` nearest neighbours."""
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    t0 = time.perf_counter()
    n = len(cloud)
    if n <= k:
        return _report(cloud, np.zeros(n, bool), t0)
    md = _mean_knn_distance(cloud.positions, k)
    mu, sigma = md.mean(), md.std()
    return _report(cloud, md > mu + std_mult * sigma, t0)


def dror(cloud: PointCloud, alpha: float = 0.02, min_neighbors: int = 3,
         r_min: float = 0.1) -> FilterReport:
    """Dynamic radius outlier removal: search radius ``max(r_min, alpha * range)``."""
    if alpha <= 0:
        raise InvalidArgument("alpha must be positive")
    t0 = time.perf_counter()
    pts = cloud.positions
    n = len(pts)
    if n == 0:
        return _report(cloud, np.zeros(0, bool), t0)
    radius = np.maximum(r_min, alpha * cloud.ranges)
    i, j, d = _pairs_within(pts, float(radius.max()))
    count = (np.bincount(i[d <= radius[i]], minlength=n)
             + np.bincount(j[d <= radius[j]], minlength=n))
    return _report(cloud, count < min_neighbors, t0)


def dsor(cloud: PointCloud, k: int = 10, std_mult: float = 1.0,
         range_mult: float = 0.05) -> FilterReport:
    """Dynamic statistical outlier removal.

    A point is removed when its mean k-NN distance exceeds
    ``(mean * std_mult) * (range_mult * range)``, where ``mean`` is the
    cloud-wide mean of that statistic. The threshold grows with range so
    sparse far returns are tolerated.
    """
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    t0 = time.perf_counter()
    n = len(cloud)
    if n <= k:
        return _report(cloud, np.zeros(n, bool), t0)
    md = _mean_knn_distance(cloud.positions, k)
    threshold = (md.mean() * std_mult) * (range_mult * cloud.ranges)
    return _report(cloud, md > threshold, t0)


def mask_filter(cloud: PointCloud, ratio: float = 0.01) -> FilterReport:
    """The intensity threshold mask viewed as a filter."""
    t0 = time.perf_counter()
    m = snow_mask(cloud.intensities, ratio)
    return _report(cloud, m.bits == 0, t0)


FILTERS = {"ror": ror, "sor": sor, "dror": dror, "dsor": dsor, "mask": mask_filter}
