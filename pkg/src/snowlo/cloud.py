"""Point-cloud container and geometric primitives.

Positions are float64 ``(N, 3)`` arrays in the sensor frame (meters). Normals
that could not be estimated are stored as NaN rows; use
:attr:`PointCloud.normal_valid` to select the usable ones.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numba
import numpy as np
from scipy.spatial import cKDTree

from .errors import DegeneratePoint, EmptyAfterPreprocess, InvalidArgument

log = logging.getLogger(__name__)

SCENE = 0
SNOW = 1


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    intensities: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        inten = np.asarray(self.intensities, dtype=np.float64).reshape(-1)
        if len(inten) != len(pos):
            raise InvalidArgument(
                f"{len(pos)} positions but {len(inten)} intensities")
        if np.any(inten < 0):
            raise InvalidArgument("intensities must be non-negative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", inten)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pos):
                raise InvalidArgument("normals length mismatch")
            object.__setattr__(self, "normals", nrm)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
            if len(lab) != len(pos):
                raise InvalidArgument("labels length mismatch")
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.positions, axis=1)

    @property
    def normal_valid(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)

    def select(self, index) -> "PointCloud":
        """Sub-cloud by integer index array or boolean mask."""
        return PointCloud(
            self.positions[index],
            self.intensities[index],
            None if self.normals is None else self.normals[index],
            None if self.labels is None else self.labels[index],
        )

    def with_normals(self, normals: Optional[np.ndarray]) -> "PointCloud":
        return PointCloud(self.positions, self.intensities, normals, self.labels)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.empty((0, 3)), np.empty(0))


def _xyz(cloud: Union[PointCloud, np.ndarray]) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.positions
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


# ----------------------------------------------------------------------------
# spherical coordinates


class SphericalPoint(NamedTuple):
    r: float
    theta: float
    phi: float


def to_spherical(p: Sequence[float]) -> SphericalPoint:
    """Range, azimuth in (-pi, pi] and elevation in [-pi/2, pi/2]."""
    x, y, z = (float(v) for v in p)
    r = math.sqrt(x * x + y * y + z * z)
    if r < 1e-9:
        raise DegeneratePoint(f"point {tuple(p)} is at the origin")
    # atan2 form stays accurate near the poles, where asin(z / r) does not
    return SphericalPoint(r, math.atan2(y, x), math.atan2(z, math.hypot(x, y)))


def from_spherical(s: Sequence[float]) -> np.ndarray:
    r, theta, phi = s
    c = math.cos(phi)
    return np.array([r * c * math.cos(theta), r * c * math.sin(theta), r * math.sin(phi)])


def cartesian_to_spherical(points: np.ndarray) -> np.ndarray:
    """Vectorised :func:`to_spherical`; returns ``(N, 3)`` columns ``r, theta, phi``."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.sqrt(np.sum(p * p, axis=1))
    if np.any(r < 1e-9):
        raise DegeneratePoint("cloud contains a point at the sensor origin")
    theta = np.arctan2(p[:, 1], p[:, 0])
    phi = np.arctan2(p[:, 2], np.hypot(p[:, 0], p[:, 1]))
    return np.column_stack([r, theta, phi])


def spherical_to_cartesian(sph: np.ndarray) -> np.ndarray:
    s = np.asarray(sph, dtype=np.float64).reshape(-1, 3)
    r, theta, phi = s[:, 0], s[:, 1], s[:, 2]
    c = np.cos(phi)
    return np.column_stack([r * c * np.cos(theta), r * c * np.sin(theta), r * np.sin(phi)])


# ----------------------------------------------------------------------------
# downsampling


def voxel_downsample(cloud: PointCloud, cell: float) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Output is ordered by voxel key (lexicographic in x, y, z cell index).
    Intensity is the member mean; a voxel is labelled snow when at least
    half its members are.
    """
    if cell <= 0:
        raise InvalidArgument("voxel cell size must be positive")
    if len(cloud) == 0:
        return PointCloud.empty()
    keys = np.floor(cloud.positions / cell).astype(np.int64)
    keys -= keys.min(axis=0)
    span = keys.max(axis=0) + 1
    if float(span[0]) * float(span[1]) * float(span[2]) < 2.0 ** 62:
        # pack cells into one integer, preserving lexicographic order
        flat = (keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
        _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    else:
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = len(counts)
    centroid = np.column_stack(
        [np.bincount(inverse, weights=cloud.positions[:, c], minlength=m) for c in range(3)]
    ) / counts[:, None]
    inten = np.bincount(inverse, weights=cloud.intensities, minlength=m) / counts
    labels = None
    if cloud.labels is not None:
        snow = np.bincount(inverse, weights=cloud.labels.astype(np.float64), minlength=m)
        labels = (2 * snow >= counts).astype(np.uint8)
    return PointCloud(centroid, inten, None, labels)


@numba.njit(cache=True)
def _fps_kernel(p, k, start):
    n = p.shape[0]
    sel = np.empty(k, np.int64)
    d = np.empty(n)
    j = start
    for i in range(n):
        d[i] = np.inf
    for m in range(k):
        sel[m] = j
        d[j] = -1.0
        best = -1.0
        nxt = 0
        px, py, pz = p[j, 0], p[j, 1], p[j, 2]
        for i in range(n):
            di = d[i]
            if di < 0.0:
                continue
            ex = p[i, 0] - px
            ey = p[i, 1] - py
            ez = p[i, 2] - pz
            s = ex * ex + ey * ey + ez * ez
            if s < di:
                di = s
                d[i] = s
            if di > best:
                best = di
                nxt = i
        j = nxt
    return sel


@numba.njit(cache=True)
def _box_dist2(lo, hi, b, px, py, pz):
    ex = max(lo[b, 0] - px, 0.0, px - hi[b, 0])
    ey = max(lo[b, 1] - py, 0.0, py - hi[b, 1])
    ez = max(lo[b, 2] - pz, 0.0, pz - hi[b, 2])
    return ex * ex + ey * ey + ez * ez


@numba.njit(cache=True)
def _fps_bucket_kernel(p, k, start, bstart, orig, group):
    """Same picks as :func:`_fps_kernel` for points grouped into compact buckets.

    ``p`` is ordered by bucket, ``bstart`` holds bucket boundaries and
    ``orig`` the original index of each point (for tie breaking). A bucket
    whose bounding box lies no closer to the new pick than its current best
    distance cannot change, so it is skipped. Runs of ``group`` consecutive
    buckets form super-buckets that are pruned the same way.
    """
    n = p.shape[0]
    nb = bstart.shape[0] - 1
    ng = (nb + group - 1) // group
    lo = np.full((nb, 3), np.inf)
    hi = np.full((nb, 3), -np.inf)
    glo = np.full((ng, 3), np.inf)
    ghi = np.full((ng, 3), -np.inf)
    for b in range(nb):
        g = b // group
        for i in range(bstart[b], bstart[b + 1]):
            for c in range(3):
                lo[b, c] = min(lo[b, c], p[i, c])
                hi[b, c] = max(hi[b, c], p[i, c])
        for c in range(3):
            glo[g, c] = min(glo[g, c], lo[b, c])
            ghi[g, c] = max(ghi[g, c], hi[b, c])
    d = np.full(n, np.inf)
    bmax = np.full(nb, np.inf)
    barg = np.empty(nb, np.int64)
    gmax = np.full(ng, np.inf)
    garg = np.empty(ng, np.int64)
    for b in range(nb):
        barg[b] = bstart[b]
    for g in range(ng):
        garg[g] = bstart[g * group]
    sel = np.empty(k, np.int64)
    j = start
    for m in range(k):
        sel[m] = j
        d[j] = -1.0
        px, py, pz = p[j, 0], p[j, 1], p[j, 2]
        best = -1.0
        nxt = 0
        for g in range(ng):
            if _box_dist2(glo, ghi, g, px, py, pz) < gmax[g] or garg[g] == j:
                gm = -1.0
                ga = bstart[g * group]
                for b in range(g * group, min(nb, (g + 1) * group)):
                    if _box_dist2(lo, hi, b, px, py, pz) < bmax[b] or barg[b] == j:
                        bm = -1.0
                        ba = bstart[b]
                        for i in range(bstart[b], bstart[b + 1]):
                            di = d[i]
                            if di < 0.0:
                                continue
                            ex = p[i, 0] - px
                            ey = p[i, 1] - py
                            ez = p[i, 2] - pz
                            sd = ex * ex + ey * ey + ez * ez
                            if sd < di:
                                di = sd
                                d[i] = sd
                            if di > bm or (di == bm and orig[i] < orig[ba]):
                                bm = di
                                ba = i
                        bmax[b] = bm
                        barg[b] = ba
                    if bmax[b] > gm or (bmax[b] == gm and orig[barg[b]] < orig[ga]):
                        gm = bmax[b]
                        ga = barg[b]
                gmax[g] = gm
                garg[g] = ga
            if gmax[g] > best or (gmax[g] == best and orig[garg[g]] < orig[nxt]):
                best = gmax[g]
                nxt = garg[g]
        j = nxt
    return sel


_BUCKET_SIZE = 32
_GROUP_SIZE = 16
_BUCKET_MIN_N = 1024


def _morton_order(pts: np.ndarray) -> np.ndarray:
    span = np.ptp(pts, axis=0)
    q = ((pts - pts.min(axis=0)) / np.where(span > 0, span, 1.0) * 1023).astype(np.uint64)
    code = np.zeros(len(pts), dtype=np.uint64)
    for bit in range(10):
        for c in range(3):
            code |= ((q[:, c] >> np.uint64(bit)) & np.uint64(1)) << np.uint64(3 * bit + c)
    return np.argsort(code, kind="stable")


def fps(cloud: Union[PointCloud, np.ndarray], k: int, seed: int = 0,
        start: Optional[int] = None) -> np.ndarray:
    """Farthest point sampling.

    The first index is drawn uniformly from ``seed`` (or given as ``start``);
    each next index maximises the distance to the selected set, ties going to
    the lowest index.
    """
    pts = np.ascontiguousarray(_xyz(cloud))
    n = len(pts)
    if not 1 <= k <= n:
        raise InvalidArgument(f"cannot sample {k} of {n} points")
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    if n < _BUCKET_MIN_N:
        return _fps_kernel(pts, int(k), int(start))
    # bucketed run on Morton-ordered points, identical picks in original indices
    order = _morton_order(pts)
    rank = np.empty(n, np.int64)
    rank[order] = np.arange(n)
    bstart = np.append(np.arange(0, n, _BUCKET_SIZE), n).astype(np.int64)
    sel = _fps_bucket_kernel(pts[order], int(k), int(rank[start]), bstart, order,
                             _GROUP_SIZE)
    return order[sel]


# ----------------------------------------------------------------------------
# spatial index


def _distances(points: np.ndarray, query: np.ndarray, idx: np.ndarray) -> np.ndarray:
    diff = points[idx] - query[:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


class SpatialIndex:
    """Immutable k-d tree over a fixed point set.

    Neighbour lists are ordered by (distance, index) so equidistant points
    resolve deterministically to the lowest index.
    """

    def __init__(self, cloud: Union[PointCloud, np.ndarray]):
        self.points = np.ascontiguousarray(_xyz(cloud))
        if len(self.points) == 0:
            raise InvalidArgument("cannot index an empty cloud")
        self.tree = cKDTree(self.points, balanced_tree=False)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray, k: int, max_dist: Optional[float] = None):
        """Batched k-NN; returns ``(indices, distances)`` of shape ``(m, k)``.

        With ``max_dist`` the search stops at that distance (inclusive) and
        missing neighbours come back as index -1, distance inf.
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if k < 1:
            raise InvalidArgument("k must be >= 1")
        k = min(k, n)
        kq = min(k + 1, n)
        bound = np.inf if max_dist is None else max_dist * (1 + 1e-9) + 1e-12
        _, idx = self.tree.query(q, k=kq, distance_upper_bound=bound)
        idx = np.asarray(idx).reshape(len(q), kq)
        missing = idx >= n
        idx[missing] = -1
        dist = _distances(self.points, q, idx)
        dist[missing] = np.inf
        if max_dist is not None:
            far = dist > max_dist
            idx[far] = -1
            dist[far] = np.inf
        order = np.lexsort((idx, dist), axis=-1)
        idx = np.take_along_axis(idx, order, axis=-1)
        dist = np.take_along_axis(dist, order, axis=-1)
        if kq > k:
            # a point equidistant with the k-th may have been cut off by the tree
            tied = np.nonzero(np.isfinite(dist[:, k - 1])
                              & (dist[:, k] <= dist[:, k - 1] * (1 + 1e-9) + 1e-12))[0]
            for row in tied:
                cand = np.asarray(
                    self.tree.query_ball_point(q[row], dist[row, k - 1] * (1 + 1e-9) + 1e-12),
                    dtype=np.int64,
                )
                cd = _distances(self.points, q[row:row + 1], cand[None, :])[0]
                o = np.lexsort((cand, cd))[:k]
                idx[row, :k] = cand[o]
                dist[row, :k] = cd[o]
        return idx[:, :k], dist[:, :k]

    def radius_neighbors(self, query: np.ndarray, radius: float) -> np.ndarray:
        """Indices within ``radius`` (inclusive) of a single query, ascending."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = np.asarray(self.tree.query_ball_point(q, radius * (1 + 1e-9) + 1e-12),
                          dtype=np.int64)
        if len(cand) == 0:
            return cand
        d = _distances(self.points, q[None, :], cand[None, :])[0]
        return np.sort(cand[d <= radius])


def knn(index: SpatialIndex, query: Sequence[float], k: int) -> list[tuple[int, float]]:
    """The ``k`` nearest points to one query as ``(index, distance)`` pairs."""
    idx, dist = index.query(np.asarray(query, dtype=np.float64)[None, :], k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


# ----------------------------------------------------------------------------
# normals


@numba.njit(cache=True)
def _neighbourhood_moments(pts, idx, count):
    m = idx.shape[0]
    cov = np.zeros((m, 3, 3))
    for r in range(m):
        c = count[r]
        if c == 0:
            continue
        mx = my = mz = 0.0
        for t in range(c):
            q = idx[r, t]
            mx += pts[q, 0]
            my += pts[q, 1]
            mz += pts[q, 2]
        mx /= c
        my /= c
        mz /= c
        for t in range(c):
            q = idx[r, t]
            dx = pts[q, 0] - mx
            dy = pts[q, 1] - my
            dz = pts[q, 2] - mz
            cov[r, 0, 0] += dx * dx
            cov[r, 0, 1] += dx * dy
            cov[r, 0, 2] += dx * dz
            cov[r, 1, 1] += dy * dy
            cov[r, 1, 2] += dy * dz
            cov[r, 2, 2] += dz * dz
        for a in range(3):
            for b in range(a, 3):
                cov[r, a, b] /= c
                cov[r, b, a] = cov[r, a, b]
    return cov


def estimate_normals(cloud: Union[PointCloud, np.ndarray], radius: float = 4.0,
                     max_nn: int = 50, tree: Optional[cKDTree] = None,
                     subset: Optional[np.ndarray] = None) -> np.ndarray:
    """PCA normals from at most ``max_nn`` neighbours within ``radius``.

    Normals point towards the sensor origin. Rows are NaN where the
    neighbourhood has fewer than 3 points (self included) or is rank < 2.
    With ``subset`` (indices or boolean mask) only those rows are estimated;
    the others are NaN. Neighbourhoods always draw on the full cloud.
    """
    pts = np.ascontiguousarray(_xyz(cloud))
    n = len(pts)
    if n < 3:
        raise InvalidArgument("need at least 3 points to estimate normals")
    rows = np.arange(n) if subset is None else np.arange(n)[subset]
    normals = np.full((n, 3), np.nan)
    if len(rows) == 0:
        return normals
    if tree is None:
        tree = cKDTree(pts, balanced_tree=False)
    k = min(max_nn, n)
    q = pts[rows]
    dist, idx = tree.query(q, k=k, distance_upper_bound=radius)
    dist = dist.reshape(len(rows), k)
    idx = idx.reshape(len(rows), k)
    # results are distance-sorted, so the in-radius neighbours come first
    count = np.isfinite(dist).sum(axis=1)
    cov = _neighbourhood_moments(pts, np.ascontiguousarray(idx, dtype=np.int64), count)
    evals, evecs = np.linalg.eigh(cov)
    nrm = evecs[:, :, 0].copy()
    flip = np.einsum("nc,nc->n", nrm, -q) < 0
    nrm[flip] *= -1
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    scale = np.maximum(evals[:, 2], 1e-300)
    bad = (count < 3) | (evals[:, 1] <= 1e-10 * scale)
    nrm[bad] = np.nan
    normals[rows] = nrm
    return normals


# ----------------------------------------------------------------------------
# preprocessing


@dataclass
class PreprocessConfig:
    ground_z_cut: float = 0.5
    max_range: float = 30.0
    voxel_cell: float = 0.2
    target_points: int = 8192
    ground_tol: float = 0.1
    ground_max_tilt_deg: float = 20.0
    ransac_iters: int = 100


def fit_ground_plane(points: np.ndarray, inlier_tol: float = 0.1, iterations: int = 100,
                     max_tilt_deg: float = 20.0, seed: int = 0,
                     min_inliers: Optional[int] = None, score_sample: int = 8192):
    """RANSAC fit of a near-horizontal plane below the sensor.

    Hypotheses are scored on a random subset of ``score_sample`` points; the
    winner is refined on all of its inliers. Returns ``(normal, offset)`` with
    ``normal[2] > 0`` so that ``points @ normal + offset`` is the height above
    ground, or ``None`` when no plausible ground plane exists.
    """
    all_pts = _xyz(points)
    n = len(all_pts)
    if min_inliers is None:
        min_inliers = max(30, n // 20)
    if n < 3:
        return None
    rng = np.random.default_rng(seed)
    if n > score_sample:
        pts = all_pts[rng.choice(n, score_sample, replace=False)]
        min_inliers = int(math.ceil(min_inliers * score_sample / n))
        n = score_sample
    else:
        pts = all_pts
    tri = rng.integers(0, n, size=(iterations, 3))
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    nrm = np.cross(b - a, c - a)
    length = np.linalg.norm(nrm, axis=1)
    ok = length > 1e-9
    nrm[ok] /= length[ok, None]
    nrm[nrm[:, 2] < 0] *= -1
    offset = -np.einsum("ic,ic->i", nrm, a)
    ok &= nrm[:, 2] >= math.cos(math.radians(max_tilt_deg))
    ok &= offset > 0  # sensor origin lies above the plane
    if not np.any(ok):
        return None
    nrm, offset = nrm[ok], offset[ok]
    resid = np.abs(pts @ nrm.T + offset)
    score = (resid < inlier_tol).sum(axis=0)
    best = int(np.argmax(score))
    if score[best] < min_inliers:
        return None
    inl = all_pts[np.abs(all_pts @ nrm[best] + offset[best]) < inlier_tol]
    centre = inl.mean(axis=0)
    _, _, vt = np.linalg.svd(inl - centre, full_matrices=False)
    normal = vt[2] if vt[2, 2] > 0 else -vt[2]
    return normal, float(-normal @ centre)


def preprocess(cloud: PointCloud, cfg: Optional[PreprocessConfig] = None,
               seed: int = 0) -> PointCloud:
    """Ground cut, range cut, voxel grid and FPS cap to ``target_points``."""
    cfg = cfg or PreprocessConfig()
    if len(cloud) == 0:
        raise EmptyAfterPreprocess("input cloud is empty")
    keep = np.ones(len(cloud), dtype=bool)
    if cfg.ground_z_cut is not None:
        ground = fit_ground_plane(cloud.positions, cfg.ground_tol, cfg.ransac_iters,
                                  cfg.ground_max_tilt_deg, seed)
        if ground is None:
            log.debug("no ground plane found; skipping ground cut")
        else:
            normal, offset = ground
            keep &= cloud.positions @ normal + offset >= cfg.ground_z_cut
    keep &= cloud.ranges <= cfg.max_range
    out = voxel_downsample(cloud.select(keep), cfg.voxel_cell)
    if len(out) == 0:
        raise EmptyAfterPreprocess("every point was filtered out")
    if cfg.target_points and len(out) > cfg.target_points:
        out = out.select(np.sort(fps(out, cfg.target_points, seed)))
    return out


# ----------------------------------------------------------------------------
# pyramid


@dataclass(frozen=True, eq=False)
class Pyramid:
    """Four nested resolution levels; ``fps_indices[k-1]`` indexes level k-1."""

    levels: tuple
    fps_indices: tuple
    _chains: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        chain = [np.arange(len(self.levels[0]))]
        for idx in self.fps_indices:
            chain.append(chain[-1][idx])
        self._chains.extend(chain)

    @property
    def sizes(self) -> tuple:
        return tuple(len(lv) for lv in self.levels)

    def to_l0(self, level: int) -> np.ndarray:
        """Map level-``level`` point indices to their l0 indices."""
        return self._chains[level]

    def with_normals(self, normals: np.ndarray) -> "Pyramid":
        """Copy with l0 ``normals`` attached to every level through the index chains."""
        levels = tuple(lv.with_normals(normals[chain])
                       for lv, chain in zip(self.levels, self._chains))
        return Pyramid(levels, self.fps_indices)


def build_pyramid(cloud: PointCloud, seed: int = 0, n_levels: int = 4,
                  ratio: int = 4) -> Pyramid:
    n_min = ratio ** (n_levels - 1)
    if len(cloud) < n_min:
        raise InvalidArgument(f"pyramid needs >= {n_min} points, got {len(cloud)}")
    rng = np.random.default_rng(seed)
    levels = [cloud]
    maps = []
    for _ in range(n_levels - 1):
        prev = levels[-1]
        k = -(-len(prev) // ratio)
        idx = fps(prev, k, start=int(rng.integers(len(prev))))
        maps.append(idx)
        levels.append(prev.select(idx))
    return Pyramid(tuple(levels), tuple(maps))
