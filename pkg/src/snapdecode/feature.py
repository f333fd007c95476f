"""Region feature extraction: weight standard-space snapshots by their
category's regressor map, segment by atlas, keep regions with any nonzero
voxel, and denoise each kept region with a size-dependent Gaussian kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .snapshot import GaussianKernel1D, convolve_same
from .volume import Atlas


@dataclass(frozen=True)
class WeightedSnapshot:
    """Standard-space snapshot after elementwise regressor weighting."""

    snapshot_id: str
    category: str
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "theta", np.ascontiguousarray(self.theta, dtype=np.float64)
        )


def weight_snapshot(
    psi: np.ndarray, beta_star: np.ndarray, *, snapshot_id: str = "",
    category: str = "",
) -> WeightedSnapshot:
    """Elementwise product of a snapshot with its category's regressor map.

    Voxels where the regressor is exactly zero stay zero in the result, so
    deactivated voxels (and whole deactivated regions) drop out downstream.
    """
    psi = np.asarray(psi, dtype=np.float64)
    beta_star = np.asarray(beta_star, dtype=np.float64)
    if psi.shape != beta_star.shape or psi.ndim != 1:
        raise ValueError(
            f"length mismatch: snapshot {psi.shape} vs weights {beta_star.shape}"
        )
    return WeightedSnapshot(snapshot_id, category, psi * beta_star)


@dataclass(frozen=True)
class RegionSlice:
    region_id: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.ascontiguousarray(self.values, dtype=np.float64)
        )

    @property
    def n(self) -> int:
        return self.values.size


def segment(theta: WeightedSnapshot, atlas: Atlas) -> list[RegionSlice]:
    """One slice per atlas region, voxels in ascending linear-index order.

    Background (label 0) voxels belong to no slice.
    """
    if theta.theta.size != atlas.n:
        raise ValueError(
            f"snapshot has {theta.theta.size} voxels, atlas has {atlas.n}"
        )
    return [
        RegionSlice(region, theta.theta[atlas.region_voxels(region)])
        for region in range(1, atlas.L + 1)
    ]


@dataclass(frozen=True)
class ActiveRegionSet:
    snapshot_id: str
    regions: tuple[int, ...]

    @property
    def first(self):
        return self.regions[0] if self.regions else None

    @property
    def last(self):
        return self.regions[-1] if self.regions else None


def detect_active(slices, snapshot_id: str = "") -> ActiveRegionSet:
    """Regions whose absolute voxel sum is nonzero, exactly (no tolerance)."""
    active = tuple(
        s.region_id for s in slices if np.abs(s.values).sum() > 0.0
    )
    return ActiveRegionSet(snapshot_id, active)


class DegenerateRegion(ValueError):
    """Region too small for a size-dependent kernel (fewer than 2 voxels)."""


def region_kernel(n_voxels: int) -> GaussianKernel1D:
    """Denoising kernel for a region of N voxels: sigma = 1/(5 ln N).

    The exponent divides by 2*sigma (not 2*sigma^2) and the support is
    +/- 2*ceil(sigma), matching the source formula as printed. ln 1 = 0
    makes N <= 1 degenerate; callers substitute a pass-through there.
    """
    if n_voxels <= 1:
        raise DegenerateRegion(f"region of {n_voxels} voxel(s) has no kernel scale")
    sigma = 1.0 / (5.0 * math.log(n_voxels))
    radius = 2 * math.ceil(sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma))
    return GaussianKernel1D(sigma, weights / weights.sum())


@dataclass(frozen=True)
class FeatureVector:
    """Smoothed active-region slices concatenated in ascending region order."""

    snapshot_id: str
    category: str
    values: np.ndarray
    offsets: tuple[tuple[int, int, int], ...]  # (region_id, start, length)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        total = sum(length for _, _, length in self.offsets)
        if values.size != total:
            raise ValueError("offsets do not cover the value vector")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "offsets", tuple(self.offsets))

    def region_values(self, region_id: int, size: int | None = None) -> np.ndarray:
        """Slice for one region; zeros of the requested size when absent."""
        for rid, start, length in self.offsets:
            if rid == region_id:
                if size is not None and size != length:
                    raise ValueError(
                        f"region {region_id} has {length} voxels, expected {size}"
                    )
                return self.values[start : start + length]
        if size is None:
            raise KeyError(f"region {region_id} not active in {self.snapshot_id}")
        return np.zeros(size)

    @property
    def active_regions(self) -> tuple[int, ...]:
        return tuple(rid for rid, _, _ in self.offsets)


def smooth_regions(
    theta_slices, *, snapshot_id: str = "", category: str = ""
) -> FeatureVector:
    """Convolve each active slice with its region's kernel ('same', zero pad).

    Single-voxel regions pass through unchanged. Slices are concatenated in
    ascending region order with an offsets table for later lookup.
    """
    ordered = sorted(theta_slices, key=lambda s: s.region_id)
    pieces = []
    offsets = []
    start = 0
    for s in ordered:
        if s.n == 0:
            raise ValueError(f"region {s.region_id} is empty; cannot be active")
        if s.n == 1:
            smoothed = s.values.copy()
        else:
            smoothed = convolve_same(s.values, region_kernel(s.n))
        pieces.append(smoothed)
        offsets.append((s.region_id, start, s.n))
        start += s.n
    values = np.concatenate(pieces) if pieces else np.zeros(0)
    return FeatureVector(snapshot_id, category, values, tuple(offsets))


@dataclass(frozen=True)
class RegionLayout:
    """Fixed global feature coordinate system: every non-empty atlas region
    in ascending id order. Snapshots missing a region contribute zeros, so
    all rows share one layout.
    """

    regions: tuple[tuple[int, int], ...]  # (region_id, size)

    @property
    def total(self) -> int:
        return sum(size for _, size in self.regions)

    def offsets(self):
        start = 0
        for rid, size in self.regions:
            yield rid, start, size
            start += size


def layout_from_atlas(atlas: Atlas) -> RegionLayout:
    return RegionLayout(
        tuple(
            (region, atlas.region_size(region))
            for region in range(1, atlas.L + 1)
            if atlas.region_size(region) > 0
        )
    )


def global_row(fv: FeatureVector, layout: RegionLayout) -> np.ndarray:
    row = np.zeros(layout.total)
    for rid, start, size in layout.offsets():
        values = fv.region_values(rid, size) if rid in fv.active_regions else None
        if values is not None:
            row[start : start + size] = values
    return row


def global_matrix(feature_vectors, layout: RegionLayout) -> np.ndarray:
    return np.stack([global_row(fv, layout) for fv in feature_vectors])
