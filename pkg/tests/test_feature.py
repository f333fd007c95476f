import math

import numpy as np
import numpy.testing as npt
import pytest

from snapdecode.feature import (
    DegenerateRegion,
    RegionSlice,
    detect_active,
    global_matrix,
    global_row,
    layout_from_atlas,
    region_kernel,
    segment,
    smooth_regions,
    weight_snapshot,
)
from snapdecode.volume import Volume3D, atlas_from_labels


def make_atlas(labels, dims):
    return atlas_from_labels(Volume3D(dims, np.asarray(labels, dtype=np.int32)))


class TestWeightSnapshot:
    def test_all_ones_is_identity(self):
        psi = np.arange(5.0)
        npt.assert_array_equal(weight_snapshot(psi, np.ones(5)).theta, psi)

    def test_all_zeros(self):
        npt.assert_array_equal(
            weight_snapshot(np.arange(4.0), np.zeros(4)).theta, np.zeros(4)
        )

    def test_zero_pattern_propagates(self):
        rng = np.random.default_rng(0)
        psi = rng.normal(size=100)
        beta = rng.normal(size=100)
        beta[rng.choice(100, 30, replace=False)] = 0.0
        theta = weight_snapshot(psi, beta).theta
        assert np.all(theta[beta == 0] == 0)
        npt.assert_array_equal(theta, psi * beta)  # elementwise oracle

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            weight_snapshot(np.zeros(3), np.zeros(4))


class TestSegment:
    def test_single_region_covers_all(self):
        atlas = make_atlas([1, 1, 1, 1], (4, 1, 1))
        theta = weight_snapshot(np.array([5.0, 6, 7, 8]), np.ones(4))
        slices = segment(theta, atlas)
        assert len(slices) == 1
        npt.assert_array_equal(slices[0].values, [5, 6, 7, 8])

    def test_direct_construction_with_background(self):
        atlas = make_atlas([1, 1, 2, 0], (4, 1, 1))
        theta = weight_snapshot(np.array([5.0, 6, 7, 8]), np.ones(4))
        slices = segment(theta, atlas)
        npt.assert_array_equal(slices[0].values, [5, 6])
        npt.assert_array_equal(slices[1].values, [7])

    def test_scatter_gather_identity(self):
        rng = np.random.default_rng(1)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            labels = rng.integers(0, 6, size=64).astype(np.int32)
            atlas = make_atlas(labels, (4, 4, 4))
            theta = weight_snapshot(rng.normal(size=64), np.ones(64))
            slices = segment(theta, atlas)
            rebuilt = np.zeros(64)
            for s in slices:
                rebuilt[atlas.region_voxels(s.region_id)] = s.values
            npt.assert_array_equal(rebuilt[labels != 0], theta.theta[labels != 0])
            assert sum(s.n for s in slices) == int((labels != 0).sum())

    def test_length_mismatch(self):
        atlas = make_atlas([1, 1], (2, 1, 1))
        with pytest.raises(ValueError, match="voxels"):
            segment(weight_snapshot(np.zeros(3), np.zeros(3)), atlas)


class TestDetectActive:
    def test_all_zero(self):
        slices = [RegionSlice(1, np.zeros(4)), RegionSlice(2, np.zeros(2))]
        assert detect_active(slices).regions == ()

    def test_single_active_region(self):
        slices = [RegionSlice(r, np.zeros(3)) for r in range(1, 10)]
        slices[6] = RegionSlice(7, np.array([0.0, -0.5, 0.0]))
        got = detect_active(slices)
        assert got.regions == (7,)
        assert got.first == got.last == 7

    def test_matches_bruteforce_on_sparse_random(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            slices = []
            for rid in range(1, 12):
                vals = rng.normal(size=rng.integers(1, 9))
                vals[rng.uniform(size=vals.size) < 0.7] = 0.0
                slices.append(RegionSlice(rid, vals))
            got = detect_active(slices).regions
            expected = tuple(
                s.region_id for s in slices if sum(abs(v) for v in s.values) != 0
            )
            assert got == expected


class TestRegionKernel:
    def test_sigma_for_100_voxels(self):
        k = region_kernel(100)
        npt.assert_allclose(k.sigma, 1.0 / (5.0 * math.log(100)), atol=1e-9)
        assert k.radius == 2

    def test_sigma_for_2_voxels(self):
        npt.assert_allclose(region_kernel(2).sigma, 0.2885390, atol=1e-6)

    @pytest.mark.parametrize("n", [2, 3, 10, 100, 100000])
    def test_normalization(self, n):
        assert abs(region_kernel(n).weights.sum() - 1.0) <= 1e-12

    def test_exponent_uses_two_sigma_not_two_sigma_squared(self):
        n = 50
        sigma = 1.0 / (5.0 * math.log(n))
        raw = np.exp(-np.arange(-2.0, 3.0) ** 2 / (2.0 * sigma))
        npt.assert_allclose(region_kernel(n).weights, raw / raw.sum(), atol=1e-15)

    def test_degenerate_sizes(self):
        with pytest.raises(DegenerateRegion):
            region_kernel(1)
        with pytest.raises(DegenerateRegion):
            region_kernel(0)


class TestSmoothRegions:
    def test_constant_region_interior_unchanged(self):
        slices = [RegionSlice(3, np.full(20, 2.5))]
        fv = smooth_regions(slices, snapshot_id="s", category="c")
        npt.assert_allclose(fv.region_values(3)[2:-2], 2.5, atol=1e-12)

    def test_spike_reproduces_kernel(self):
        vals = np.zeros(11)
        vals[5] = 1.0
        fv = smooth_regions([RegionSlice(1, vals)])
        k = region_kernel(11)
        npt.assert_allclose(fv.values[5 - k.radius : 5 + k.radius + 1], k.weights,
                            atol=1e-15)

    def test_matches_naive_convolution(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            vals = rng.normal(size=int(rng.integers(2, 40)))
            fv = smooth_regions([RegionSlice(1, vals)])
            k = region_kernel(vals.size)
            r = k.radius
            oracle = np.zeros(vals.size)
            for j in range(vals.size):
                for g in range(-r, r + 1):
                    if 0 <= j - g < vals.size:
                        oracle[j] += k.weights[g + r] * vals[j - g]
            npt.assert_allclose(fv.values, oracle, atol=1e-12)

    def test_single_voxel_region_passes_through(self):
        fv = smooth_regions([RegionSlice(4, np.array([3.25]))])
        npt.assert_array_equal(fv.region_values(4), [3.25])

    def test_mass_preserved_away_from_edges(self):
        rng = np.random.default_rng(5)
        vals = np.zeros(30)
        vals[5:25] = rng.normal(size=20)
        fv = smooth_regions([RegionSlice(1, vals)])
        npt.assert_allclose(fv.values.sum(), vals.sum(), atol=1e-9)

    def test_ordering_and_offsets(self):
        slices = [RegionSlice(5, np.ones(3)), RegionSlice(2, np.ones(2))]
        fv = smooth_regions(slices)
        assert fv.active_regions == (2, 5)
        assert fv.offsets == ((2, 0, 2), (5, 2, 3))

    def test_determinism(self):
        rng = np.random.default_rng(6)
        vals = rng.normal(size=17)
        a = smooth_regions([RegionSlice(1, vals.copy())])
        b = smooth_regions([RegionSlice(1, vals.copy())])
        assert a.values.tobytes() == b.values.tobytes()


class TestGlobalLayout:
    def test_zero_fill_for_inactive_regions(self):
        atlas = make_atlas([1, 1, 2, 2, 3, 3], (6, 1, 1))
        layout = layout_from_atlas(atlas)
        assert layout.total == 6
        fv = smooth_regions([RegionSlice(2, np.array([1.0, 2.0]))],
                            snapshot_id="s", category="c")
        row = global_row(fv, layout)
        npt.assert_array_equal(row[:2], 0)
        npt.assert_array_equal(row[2:4], fv.region_values(2))
        npt.assert_array_equal(row[4:], 0)

    def test_matrix_shape(self):
        atlas = make_atlas([1, 2, 2, 0], (4, 1, 1))
        layout = layout_from_atlas(atlas)
        fvs = [
            smooth_regions([RegionSlice(1, np.array([1.0]))]),
            smooth_regions([RegionSlice(2, np.array([1.0, 2.0]))]),
        ]
        mat = global_matrix(fvs, layout)
        assert mat.shape == (2, 3)


def test_full_stage_pipeline_zero_propagation():
    # weighted zeros flow through segmentation, detection and smoothing
    rng = np.random.default_rng(7)
    labels = np.repeat(np.arange(1, 9), 8).astype(np.int32)
    atlas = make_atlas(labels, (8, 8, 1))
    psi = rng.normal(size=64)
    beta = np.zeros(64)
    beta[labels == 3] = rng.normal(size=8)
    beta[labels == 6] = rng.normal(size=8)
    theta = weight_snapshot(psi, beta, snapshot_id="s0", category="a")
    assert set(np.flatnonzero(theta.theta)) <= set(np.flatnonzero(beta))
    slices = segment(theta, atlas)
    active = detect_active(slices, "s0")
    assert active.regions == (3, 6)
    fv = smooth_regions([s for s in slices if s.region_id in active.regions],
                        snapshot_id="s0", category="a")
    assert fv.values.size == 16
