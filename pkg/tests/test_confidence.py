import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snowlo.cloud import PointCloud, build_pyramid
from snowlo.confidence import (
    combine_weights,
    default_point_weights,
    density_intensity_predictor,
    propagate_weights,
    uniform_predictor,
)
from snowlo.errors import InvalidArgument
from snowlo.psm import score_cloud, segment_patches
from snowlo.snowmask import snow_mask

unit = st.floats(0, 1)


def lattice_patch(n=4):
    g = np.stack(np.meshgrid(*[np.arange(float(n))] * 3, indexing="ij"), -1).reshape(1, -1, 3)
    return g


def test_lattice_with_uniform_intensity_is_symmetric():
    pos = np.array([[[x, y, 0.0] for x in range(-4, 5) for y in range(-4, 5)]])
    # interior points see identical neighbourhoods; the rim does not
    w = density_intensity_predictor(pos, np.full(pos.shape[:2], 9.0), None)
    interior = (np.abs(pos[0, :, 0]) <= 2) & (np.abs(pos[0, :, 1]) <= 2)
    assert np.allclose(w[0, interior], w[0, interior][0], rtol=0, atol=1e-15)


def test_isolated_outlier_gets_lowest_weight():
    pos = lattice_patch().astype(float)
    pos[0, 0] = [30.0, 30.0, 30.0]
    w = density_intensity_predictor(pos, np.ones(pos.shape[:2]), None)
    assert w[0, 0] < w[0, 1:].min()


def test_intensity_at_median_is_neutral():
    pos = lattice_patch()
    inten = np.arange(pos.shape[1], dtype=float)[None] + 1
    w = density_intensity_predictor(pos, inten, None)
    w_uniform = density_intensity_predictor(pos, np.ones_like(inten), None)
    med = np.median(inten)
    above = inten[0] >= med
    assert np.allclose(w[0, above], w_uniform[0, above])
    assert np.all(w[0, ~above] < w_uniform[0, ~above])


def test_small_patch_has_unit_density():
    pos = np.random.default_rng(0).normal(size=(2, 8, 3))
    w = density_intensity_predictor(pos, np.ones((2, 8)), None)
    assert np.array_equal(w, np.ones((2, 8)))


def test_predictor_output_range(rng):
    pos = rng.normal(size=(10, 64, 3)) * 5
    w = density_intensity_predictor(pos, rng.uniform(0, 100, (10, 64)), None)
    assert w.shape == (10, 64)
    assert w.min() >= 0 and w.max() <= 1


def test_default_weights_scatter_and_fill(rng):
    pts = rng.uniform(-20, 20, size=(4096, 3))
    pyr = build_pyramid(PointCloud(pts, np.ones(4096)))
    patches = segment_patches(pyr, 8)
    w = default_point_weights(patches, pts, np.ones(4096))
    uncovered = np.setdiff1d(np.arange(4096), patches.member_indices.ravel())
    assert np.all(w[uncovered] == 1.0)
    assert np.array_equal(default_point_weights(patches, pts, np.ones(4096), uniform_predictor),
                          np.ones(4096))


def test_predictor_shape_checked(rng):
    pts = rng.uniform(-5, 5, size=(256, 3))
    patches = segment_patches(build_pyramid(PointCloud(pts, np.ones(256))), 16)
    with pytest.raises(InvalidArgument):
        default_point_weights(patches, pts, np.ones(256), lambda p, i, r: np.ones(3))


def test_combine_examples():
    assert combine_weights([1, 0.3], [0, 0], [1, 1]).w.tolist() == [0, 0]
    assert combine_weights([1.0], [1], [0.7]).w.tolist() == [0.7]
    assert combine_weights(np.ones(5), np.ones(5), np.ones(5)).w.tolist() == [1.0] * 5


def test_combine_length_mismatch():
    with pytest.raises(InvalidArgument):
        combine_weights([1, 1], [1], [1, 1])


def test_combine_accepts_score_and_mask_objects(rng):
    pts = rng.uniform(-10, 10, size=(512, 3)) + [15, 0, 0]
    inten = rng.uniform(0, 100, 512)
    pyr = build_pyramid(PointCloud(pts, inten))
    sp, mask = score_cloud(pyr, 16), snow_mask(inten)
    wpp = rng.uniform(size=512)
    assert np.array_equal(combine_weights(sp, mask, wpp).w, sp.sp * mask.bits * wpp)


@given(st.lists(st.tuples(unit, st.integers(0, 1), unit), min_size=1, max_size=30))
def test_combined_weight_bounded_and_masked(rows):
    sp, m, wpp = map(np.array, zip(*rows))
    w = combine_weights(sp, m, wpp).w
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(w[m == 0] == 0)


@given(unit, unit, unit, unit)
def test_lowering_a_factor_never_raises_weight(a, b, c, drop):
    before = combine_weights([a], [1], [b * c]).w[0]
    after = combine_weights([a * drop], [1], [b * c]).w[0]
    assert after <= before


def test_propagate_constant(rng):
    pyr = build_pyramid(PointCloud(rng.normal(size=(300, 3)), np.ones(300)))
    for level in propagate_weights(np.full(300, 0.25), pyr):
        assert np.all(level == 0.25)


def test_propagate_zero_reaches_l3(rng):
    pyr = build_pyramid(PointCloud(rng.normal(size=(300, 3)), np.ones(300)))
    w = np.ones(300)
    j = pyr.to_l0(3)[0]
    w[j] = 0
    assert propagate_weights(w, pyr)[3][0] == 0


def test_propagate_matches_chain_oracle(rng):
    pts = rng.normal(size=(8192, 3)) * 10
    pyr = build_pyramid(PointCloud(pts, np.ones(8192)))
    w = rng.uniform(size=8192)
    levels = propagate_weights(w, pyr)
    for k in range(1, 4):
        for i in range(0, len(pyr.levels[k]), 7):
            j = i
            for idx in reversed(pyr.fps_indices[:k]):
                j = idx[j]
            assert levels[k][i] == w[j]
            assert np.array_equal(pyr.levels[k].positions[i], pts[j])


def test_propagate_length_checked(rng):
    pyr = build_pyramid(PointCloud(rng.normal(size=(100, 3)), np.ones(100)))
    with pytest.raises(InvalidArgument):
        propagate_weights(np.ones(99), pyr)
