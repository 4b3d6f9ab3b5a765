import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snowlo.cloud import PointCloud, SpatialIndex, build_pyramid, cartesian_to_spherical
from snowlo.errors import InvalidArgument
from snowlo.psm import (
    UNCOVERED_SCORE,
    morans_i,
    morans_i_batch,
    normalize_scores,
    score_cloud,
    segment_patches,
)


def moran_oracle(patch, eps=1e-8):
    """Direct double sum over k != j."""
    r, th, ph = patch[:, 0], patch[:, 1], patch[:, 2]
    m = len(r)
    rbar = sum(r) / m
    num = wsum = 0.0
    for k in range(m):
        for j in range(m):
            if k == j:
                continue
            dth = (th[k] - th[j] + np.pi) % (2 * np.pi) - np.pi
            w = 1.0 / (dth ** 2 + (ph[k] - ph[j]) ** 2 + eps)
            wsum += w
            num += w * (r[k] - rbar) * (r[j] - rbar)
    return m / wsum * num / sum((x - rbar) ** 2 for x in r)


def random_patches(rng, s, m):
    return np.stack([rng.uniform(1, 30, (s, m)),
                     rng.uniform(-np.pi, np.pi, (s, m)),
                     rng.uniform(-0.4, 0.2, (s, m))], axis=-1)


def cloud_of(pts):
    return PointCloud(pts, np.ones(len(pts)))


patch_strategy = st.integers(2, 24).flatmap(
    lambda m: st.tuples(
        arrays(np.float64, m, elements=st.floats(1, 50)),
        arrays(np.float64, m, elements=st.floats(-3.1, 3.1)),
        arrays(np.float64, m, elements=st.floats(-1.2, 1.2)),
    )).map(lambda t: np.column_stack(t))


def test_moran_matches_double_sum_oracle(rng):
    patches = random_patches(rng, 100, 64)
    sa = morans_i_batch(patches)
    for p, v in zip(patches, sa):
        assert abs(v - np.clip(moran_oracle(p), -1, 1)) < 1e-9


def test_constant_range_gives_plus_one(rng):
    p = random_patches(rng, 1, 10)[0]
    p[:, 0] = 7.5
    assert morans_i(p) == 1.0


def test_two_members_anticorrelate():
    assert morans_i(np.array([[3.0, 0.1, 0.0], [8.0, 0.2, 0.05]])) < 0


def test_too_few_members():
    with pytest.raises(InvalidArgument):
        morans_i(np.array([[1.0, 0, 0]]))
    with pytest.raises(InvalidArgument):
        morans_i_batch(np.zeros((3, 4)))


@settings(max_examples=60, deadline=None)
@given(patch_strategy, st.randoms(use_true_random=False))
def test_permutation_invariance(patch, rnd):
    perm = list(range(len(patch)))
    rnd.shuffle(perm)
    assert abs(morans_i(patch) - morans_i(patch[perm])) < 1e-12


@settings(max_examples=60, deadline=None)
@given(patch_strategy, st.floats(-3, 3), st.floats(-1, 1), st.floats(-0.9, 100))
def test_shift_invariances(patch, dth, dph, dr):
    base = morans_i(patch)
    shifted = patch.copy()
    shifted[:, 1] = (shifted[:, 1] + dth + np.pi) % (2 * np.pi) - np.pi
    assert morans_i(shifted) == pytest.approx(base, abs=1e-9)
    shifted = patch.copy()
    shifted[:, 2] += dph
    assert morans_i(shifted) == pytest.approx(base, abs=1e-9)
    shifted = patch.copy()
    shifted[:, 0] += dr
    assert morans_i(shifted) == pytest.approx(base, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(patch_strategy)
def test_score_bounded(patch):
    assert -1.0 <= morans_i(patch) <= 1.0


def test_normalize_endpoints():
    assert normalize_scores([-1.0, 0.0, 1.0]).tolist() == [0.0, 0.5, 1.0]


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=20))
def test_normalize_monotone_onto_unit_interval(values):
    v = np.sort(np.array(values))
    out = normalize_scores(v)
    assert np.all(np.diff(out) >= 0)
    assert out.min() >= 0 and out.max() <= 1


def test_patch_counts_for_128_points(rng):
    pyr = build_pyramid(cloud_of(rng.normal(size=(128, 3)) + [10, 0, 0]))
    patches = segment_patches(pyr, 64)
    assert len(patches) == 2
    assert patches.member_indices.shape == (2, 64)
    assert patches.spherical.shape == (2, 64, 3)


def test_superpoint_is_its_own_member(rng):
    pyr = build_pyramid(cloud_of(rng.normal(size=(2000, 3)) + [10, 0, 0]))
    patches = segment_patches(pyr, 16)
    l3_in_l0 = pyr.to_l0(3)
    assert np.array_equal(patches.member_indices[:, 0], l3_in_l0)


def test_patch_members_match_linear_scan(rng):
    pts = rng.uniform(-30, 30, size=(8192, 3))
    pyr = build_pyramid(cloud_of(pts), seed=3)
    patches = segment_patches(pyr, 64)
    for s, sp in enumerate(pyr.levels[3].positions):
        d = np.linalg.norm(pts - sp, axis=1)
        oracle = np.lexsort((np.arange(len(pts)), d))[:64]
        assert np.array_equal(patches.member_indices[s], oracle)
    assert np.allclose(patches.spherical, cartesian_to_spherical(pts)[patches.member_indices])


def test_patch_size_too_large(rng):
    pyr = build_pyramid(cloud_of(rng.normal(size=(100, 3)) + 5))
    with pytest.raises(InvalidArgument):
        segment_patches(pyr, 101)


def wall(nx=40, nz=20, x=10.0):
    y, z = np.meshgrid(np.linspace(-4, 4, nx), np.linspace(-1.5, 1.5, nz))
    return np.column_stack([np.full(y.size, x), y.ravel(), z.ravel()])


def test_wall_facing_sensor_scores_at_least_half():
    scores = score_cloud(build_pyramid(cloud_of(wall())), 64)
    assert np.all(scores.sa >= 0)
    assert np.all(scores.sp >= 0.5)


def test_dispersed_cluster_scores_below_wall(rng):
    n = 400
    az = np.pi + rng.normal(scale=0.05, size=n)
    el = rng.normal(scale=0.05, size=n)
    r = rng.uniform(4, 20, size=n)
    cluster = np.column_stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az),
                               r * np.sin(el)])
    w = wall()
    pts = np.vstack([w, cluster])
    scores = score_cloud(build_pyramid(cloud_of(pts), seed=1), 32)
    assert scores.sp[len(w):].mean() < scores.sp[:len(w)].mean()


def test_single_patch_broadcasts_one_score(rng):
    pts = rng.normal(size=(64, 3)) + [8, 0, 0]
    pyr = build_pyramid(cloud_of(pts))
    assert pyr.sizes[-1] == 1
    scores = score_cloud(pyr, 64)
    assert len(np.unique(scores.sp)) == 1
    assert scores.sp[0] == normalize_scores(scores.sa)[0]


def test_uncovered_points_are_neutral(rng):
    pts = rng.uniform(-20, 20, size=(4096, 3))
    pyr = build_pyramid(cloud_of(pts))
    scores = score_cloud(pyr, 8)
    members = segment_patches(pyr, 8).member_indices
    uncovered = np.setdiff1d(np.arange(len(pts)), members.ravel())
    assert len(uncovered) > 0
    assert np.all(scores.sp[uncovered] == UNCOVERED_SCORE)


def test_overlap_takes_maximum(rng):
    pts = rng.uniform(-5, 5, size=(1024, 3)) + [12, 0, 0]
    pyr = build_pyramid(cloud_of(pts))
    patches = segment_patches(pyr, 64)
    scores = score_cloud(pyr, 64, patches=patches)
    sp_patch = normalize_scores(scores.sa)
    for i in range(0, len(pts), 37):
        covering = np.nonzero((patches.member_indices == i).any(1))[0]
        if len(covering):
            assert scores.sp[i] == sp_patch[covering].max()


def test_batch_uses_same_index(rng):
    pts = rng.uniform(-5, 5, size=(512, 3)) + [12, 0, 0]
    pyr = build_pyramid(cloud_of(pts))
    a = segment_patches(pyr, 16)
    b = segment_patches(pyr, 16, SpatialIndex(pts))
    assert np.array_equal(a.member_indices, b.member_indices)
