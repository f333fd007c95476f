import numpy as np
import numpy.testing as npt
import pytest

from snapdecode.glm import CorrelationMap
from snapdecode.register import (
    AffineTransform,
    RegistrationConfig,
    apply_transform,
    find_transform,
    identity_transform,
    load_transforms,
    nmi,
    save_transforms,
    select_transform,
)
from snapdecode.snapshot import Snapshot
from snapdecode.volume import Volume3D


def vol(data, dims):
    return Volume3D(dims, np.asarray(data, dtype=float))


def random_volume(rng, dims):
    return vol(rng.normal(size=int(np.prod(dims))), dims)


class TestNmi:
    def test_identical_images_give_two(self):
        rng = np.random.default_rng(0)
        a = random_volume(rng, (8, 8, 8))
        assert abs(nmi(a, a, 32) - 2.0) <= 1e-9

    def test_independent_images_near_one(self):
        rng = np.random.default_rng(1)
        a = vol(rng.uniform(size=32**3), (32, 32, 32))
        b = vol(rng.uniform(size=32**3), (32, 32, 32))
        value = nmi(a, b, 2)
        assert 1.0 <= value <= 1.02
        # histogram-arithmetic oracle
        ia = np.minimum((a.data - a.data.min()) / (a.data.max() - a.data.min()) * 2, 1).astype(int)
        ib = np.minimum((b.data - b.data.min()) / (b.data.max() - b.data.min()) * 2, 1).astype(int)
        joint = np.zeros((2, 2))
        for x, y in zip(ia, ib):
            joint[x, y] += 1
        joint /= joint.sum()
        def ent(p):
            p = p[p > 0]
            return -(p * np.log(p)).sum()
        oracle = (ent(joint.sum(1)) + ent(joint.sum(0))) / ent(joint.ravel())
        npt.assert_allclose(value, oracle, atol=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = random_volume(rng, (6, 6, 6))
        b = random_volume(rng, (6, 6, 6))
        assert abs(nmi(a, b, 16) - nmi(b, a, 16)) <= 1e-12

    def test_bounds_on_assorted_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = random_volume(rng, (5, 4, 3))
            b = random_volume(rng, (5, 4, 3))
            v = nmi(a, b, int(rng.integers(2, 40)))
            assert 1.0 - 1e-12 <= v <= 2.0 + 1e-9

    def test_constant_images(self):
        a = vol(np.zeros(27), (3, 3, 3))
        b = random_volume(np.random.default_rng(4), (3, 3, 3))
        assert nmi(a, a, 8) == 2.0
        assert abs(nmi(a, b, 8) - 1.0) <= 1e-12

    def test_dimension_mismatch(self):
        a = vol(np.zeros(8), (2, 2, 2))
        b = vol(np.zeros(27), (3, 3, 3))
        with pytest.raises(ValueError, match="mismatch"):
            nmi(a, b)


class TestApplyTransform:
    def test_identity_equal_grids_exact(self):
        rng = np.random.default_rng(5)
        image = rng.normal(size=60)
        t = identity_transform((3, 4, 5))
        npt.assert_array_equal(apply_transform(image, t), image)

    def test_integer_translation_shifts_exactly(self):
        dims = (4, 4, 4)
        rng = np.random.default_rng(6)
        image = rng.normal(size=64)
        grid = image.reshape(dims, order="F")
        t = AffineTransform(np.eye(3), np.array([1.0, 0.0, 0.0]), dims, dims)
        out = apply_transform(image, t).reshape(dims, order="F")
        npt.assert_array_equal(out[:3], grid[1:])   # sampled at x+1
        npt.assert_array_equal(out[3], np.zeros((4, 4)))

    def test_linearity(self):
        dims = (5, 5, 5)
        rng = np.random.default_rng(7)
        u = rng.normal(size=125)
        v = rng.normal(size=125)
        t = AffineTransform(np.eye(3) * 0.9, np.array([0.3, -0.2, 0.7]), dims, dims)
        lhs = apply_transform(2.0 * u + 3.0 * v, t)
        rhs = 2.0 * apply_transform(u, t) + 3.0 * apply_transform(v, t)
        npt.assert_allclose(lhs, rhs, atol=1e-10)

    def test_wrong_length_rejected(self):
        t = identity_transform((2, 2, 2))
        with pytest.raises(ValueError, match="voxels"):
            apply_transform(np.zeros(9), t)


def shifted_copy(reference: Volume3D, d):
    """moving[v] = reference[v - d], zeros where v - d leaves the grid."""
    t = AffineTransform(np.eye(3), -np.asarray(d, dtype=float),
                        reference.dims, reference.dims)
    return Volume3D(reference.dims, apply_transform(reference.data, t),
                    reference.voxel_size_mm)


class TestFindTransform:
    def test_identity_mode_ignores_content(self):
        rng = np.random.default_rng(8)
        moving = random_volume(rng, (6, 6, 6))
        ref = random_volume(rng, (6, 6, 6))
        t = find_transform(moving, ref, RegistrationConfig(mode="identity"))
        assert t.is_identity

    def test_self_registration_recovers_identity(self):
        rng = np.random.default_rng(9)
        ref = random_volume(rng, (10, 10, 10))
        cfg = RegistrationConfig(mode="search", translation_range=2)
        t = find_transform(ref, ref, cfg)
        npt.assert_array_equal(t.matrix, np.eye(3))
        npt.assert_array_equal(t.translation, np.zeros(3))

    def test_translation_recovery(self):
        rng = np.random.default_rng(10)
        base = rng.normal(size=16**3).reshape(16, 16, 16)
        # smooth blobs so intensities carry spatial structure
        from scipy.ndimage import gaussian_filter
        ref = Volume3D((16, 16, 16), gaussian_filter(base, 2.0).ravel(order="F"))
        moving = shifted_copy(ref, (3, -2, 1))
        cfg = RegistrationConfig(mode="search", translation_range=4, histogram_bins=16)
        t = find_transform(moving, ref, cfg)
        npt.assert_allclose(t.translation, [3, -2, 1], atol=1.0)
        npt.assert_array_equal(t.matrix, np.eye(3))

    def test_returned_candidate_is_grid_optimal(self):
        rng = np.random.default_rng(11)
        ref = random_volume(rng, (8, 8, 8))
        moving = shifted_copy(ref, (1, 0, -1))
        cfg = RegistrationConfig(mode="search", translation_range=2, histogram_bins=8)
        best = find_transform(moving, ref, cfg)
        best_score = nmi(
            Volume3D(ref.dims, apply_transform(moving.data, best)), ref, 8
        )
        # re-scan the whole grid: nothing may beat the returned transform
        for sx in cfg.translations():
            for sy in cfg.translations():
                for sz in cfg.translations():
                    cand = AffineTransform(
                        np.eye(3), np.array([sx, sy, sz]), moving.dims, ref.dims
                    )
                    score = nmi(
                        Volume3D(ref.dims, apply_transform(moving.data, cand)), ref, 8
                    )
                    assert score <= best_score + 1e-12


class TestSelectTransform:
    def _setup(self):
        transforms = {
            0: identity_transform((4, 4, 4)),
            1: AffineTransform(np.eye(3), np.array([1.0, 0, 0]), (4, 4, 4), (4, 4, 4)),
        }
        betas = CorrelationMap(
            np.arange(128, dtype=float).reshape(2, 64), ("a", "b"), space="standard"
        )
        return transforms, betas

    def test_category_sharing(self):
        transforms, betas = self._setup()
        snaps = [
            Snapshot(f"s{k}", k % 2, "ab"[k % 2], 10 + k, np.zeros(64))
            for k in range(7)
        ]
        used = {id(select_transform(s, transforms, betas)[0]) for s in snaps}
        assert len(used) == 2

    def test_lookup_semantics(self):
        transforms, betas = self._setup()
        snap = Snapshot("s0", 1, "b", 3, np.zeros(64))
        t, beta = select_transform(snap, transforms, betas)
        assert t is transforms[1]
        npt.assert_array_equal(beta, betas.maps[1])

    def test_missing_category(self):
        transforms, betas = self._setup()
        snap = Snapshot("s0", 5, "z", 3, np.zeros(64))
        with pytest.raises(KeyError):
            select_transform(snap, transforms, betas)


def test_transform_text_roundtrip(tmp_path):
    transforms = {
        0: identity_transform((4, 5, 6), (7, 8, 9)),
        1: AffineTransform(
            np.eye(3) * 1.25, np.array([0.5, -1.0, 2.0]), (4, 5, 6), (7, 8, 9)
        ),
    }
    path = tmp_path / "transforms.csv"
    save_transforms(transforms, ("a", "b"), path)
    back = load_transforms(path, ("a", "b"))
    for i in (0, 1):
        npt.assert_array_equal(back[i].matrix, transforms[i].matrix)
        npt.assert_array_equal(back[i].translation, transforms[i].translation)
        assert back[i].source_dims == transforms[i].source_dims
        assert back[i].target_dims == transforms[i].target_dims
