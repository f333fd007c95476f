"""Snapshot selection: smooth each design column and pick the brain image
at every local maximum of the smoothed response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .glm import DesignMatrix
from .volume import BoldSeries, OnsetSchedule


@dataclass(frozen=True)
class GaussianKernel1D:
    """Discrete Gaussian weights over integer offsets -R..R, summing to 1."""

    sigma: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size % 2 == 0:
            raise ValueError("kernel needs an odd number of weights")
        if np.any(w <= 0):
            raise ValueError("kernel weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("kernel weights must sum to 1")
        if not np.allclose(w, w[::-1], rtol=0, atol=1e-15):
            raise ValueError("kernel weights must be symmetric")
        object.__setattr__(self, "weights", w)

    @property
    def radius(self) -> int:
        return (self.weights.size - 1) // 2


def gaussian_kernel(sigma: float) -> GaussianKernel1D:
    """Normalized Gaussian over integer offsets -2*ceil(sigma)..2*ceil(sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = 2 * math.ceil(sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return GaussianKernel1D(sigma, weights / weights.sum())


def convolve_same(x: np.ndarray, kernel: GaussianKernel1D) -> np.ndarray:
    """Length-preserving convolution with zero padding at both ends."""
    x = np.asarray(x, dtype=np.float64)
    full = np.convolve(x, kernel.weights)
    r = kernel.radius
    return full[r : r + x.size]


@dataclass(frozen=True)
class SmoothedDesign:
    """Design columns after temporal Gaussian smoothing; same shape as source."""

    columns: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        cols = np.ascontiguousarray(self.columns, dtype=np.float64)
        if cols.ndim != 2:
            raise ValueError("columns must be a (t, p) matrix")
        if len(self.names) != cols.shape[1]:
            raise ValueError("one name per column required")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def t(self) -> int:
        return self.columns.shape[0]

    @property
    def p(self) -> int:
        return self.columns.shape[1]


def smooth_design(d: DesignMatrix, g: GaussianKernel1D) -> SmoothedDesign:
    smoothed = np.column_stack([convolve_same(d.columns[:, i], g) for i in range(d.p)])
    return SmoothedDesign(smoothed, d.names)


def find_peaks(phi: np.ndarray, onsets=None) -> np.ndarray:
    """Interior local maxima of a 1D signal, sorted ascending.

    A peak is a maximal run of equal values that strictly rises on its left
    and strictly falls on its right; the run's first index is reported, so a
    plateau like [0, 1, 1, 0] yields index 1. Runs touching either end of
    the signal are never reported, which keeps the flat zero tail after the
    last response from counting as a maximum. The event list is not
    consulted; detection is purely signal-based.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 1 or phi.size < 3:
        return np.array([], dtype=np.intp)
    n = phi.size
    change = np.flatnonzero(np.diff(phi) != 0)
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [n - 1]))
    interior = (starts > 0) & (ends < n - 1)
    starts, ends = starts[interior], ends[interior]
    peak = (phi[starts - 1] < phi[starts]) & (phi[ends + 1] < phi[ends])
    return starts[peak]


@dataclass(frozen=True)
class Snapshot:
    """One stimulus's brain image: the raw time sample at a response peak."""

    snapshot_id: str
    category_index: int
    category: str
    time_index: int
    image: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "image", np.ascontiguousarray(self.image, dtype=np.float64)
        )


@dataclass(frozen=True)
class SnapshotSet:
    subject_id: str
    snapshots: tuple[Snapshot, ...]

    @property
    def q(self) -> int:
        return len(self.snapshots)

    def categories_present(self) -> tuple[str, ...]:
        seen: list[str] = []
        for s in self.snapshots:
            if s.category not in seen:
                seen.append(s.category)
        return tuple(seen)


def extract_snapshots(
    f: BoldSeries, sm: SmoothedDesign, schedule: OnsetSchedule
) -> SnapshotSet:
    """Copy the raw time sample at each smoothed-design peak, per category.

    Snapshots are ordered by category index, then time; ids embed the
    subject so pooled sets stay unambiguous.
    """
    if sm.t != f.t:
        raise ValueError(f"smoothed design has {sm.t} samples, series has {f.t}")
    if sm.p != schedule.p:
        raise ValueError("smoothed design and schedule disagree on category count")
    snaps: list[Snapshot] = []
    for i, cat in enumerate(schedule.categories):
        for j in find_peaks(sm.columns[:, i], cat.onsets):
            snaps.append(
                Snapshot(
                    snapshot_id="",
                    category_index=i,
                    category=cat.name,
                    time_index=int(j),
                    image=f.samples[j].copy(),
                )
            )
    if not snaps:
        raise DataError(f"no stimuli detected for subject {f.subject_id}")
    snaps = [
        Snapshot(f"{f.subject_id}_{k:04d}", s.category_index, s.category,
                 s.time_index, s.image)
        for k, s in enumerate(snaps)
    ]
    return SnapshotSet(f.subject_id, tuple(snaps))
