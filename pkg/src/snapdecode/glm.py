"""Design matrix construction and per-voxel regressor estimation.

The signal model is F = D beta^T + noise, with one design column per
stimulus category (boxcar of events convolved with the hemodynamic
response). Estimation is generalized least squares, solved by whitening
with the Cholesky factor of the noise covariance; with identity noise it
reduces to ordinary least squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import gamma as gamma_dist

from .errors import NumericalError
from .volume import BoldSeries, OnsetSchedule

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class HrfKernel:
    """Sampled hemodynamic response, normalized to peak amplitude 1."""

    samples: np.ndarray
    tr_seconds: float
    peak_index: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("HRF samples must be a non-empty vector")
        if not np.all(np.isfinite(samples)):
            raise ValueError("HRF samples must be finite")
        if samples.max() <= 0:
            raise ValueError("HRF needs at least one strictly positive sample")
        if int(np.argmax(samples)) != self.peak_index:
            raise ValueError("peak_index inconsistent with samples")
        object.__setattr__(self, "samples", samples)


def canonical_hrf(
    tr_seconds: float,
    length_seconds: float,
    *,
    response_delay: float = 6.0,
    undershoot_delay: float = 16.0,
    response_dispersion: float = 1.0,
    undershoot_dispersion: float = 1.0,
    undershoot_ratio: float = 1.0 / 6.0,
) -> HrfKernel:
    """Double-gamma hemodynamic response sampled on the acquisition grid.

    The response peaks near 5 s with a small late undershoot; the kernel is
    rescaled so its maximum is exactly 1.
    """
    if tr_seconds <= 0:
        raise ValueError(f"tr_seconds must be positive, got {tr_seconds}")
    if length_seconds < tr_seconds:
        raise ValueError("length_seconds must be at least one sampling interval")
    n = int(length_seconds / tr_seconds + 1e-9)
    times = np.arange(n) * tr_seconds
    peak = gamma_dist.pdf(times, response_delay / response_dispersion,
                          scale=response_dispersion)
    undershoot = gamma_dist.pdf(times, undershoot_delay / undershoot_dispersion,
                                scale=undershoot_dispersion)
    h = peak - undershoot_ratio * undershoot
    h = h / h.max()
    return HrfKernel(h, tr_seconds, int(np.argmax(h)))


@dataclass(frozen=True)
class DesignMatrix:
    """Expected responses per category: (t, p) column matrix."""

    columns: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        cols = np.ascontiguousarray(self.columns, dtype=np.float64)
        if cols.ndim != 2 or cols.shape[1] < 1:
            raise ValueError("columns must be a (t, p) matrix with p >= 1")
        if not np.all(np.isfinite(cols)):
            raise ValueError("design matrix contains non-finite values")
        if len(self.names) != cols.shape[1]:
            raise ValueError("one name per design column required")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def t(self) -> int:
        return self.columns.shape[0]

    @property
    def p(self) -> int:
        return self.columns.shape[1]


def build_design(schedule: OnsetSchedule, hrf: HrfKernel, t: int) -> DesignMatrix:
    """Convolve each category's event boxcar with the response kernel.

    Causal linear convolution truncated to t samples: no response before
    an event's onset. A category with no events yields a zero column.
    """
    if t < 1:
        raise ValueError("t must be positive")
    cols = np.zeros((t, schedule.p))
    for i, cat in enumerate(schedule.categories):
        stim = np.zeros(t)
        for k, (onset, dur) in enumerate(zip(cat.onsets, cat.durations)):
            if onset + dur > t:
                raise ValueError(
                    f"category {cat.name} event {k} (onset {onset}, duration "
                    f"{dur}) does not fit in {t} samples"
                )
            stim[onset : onset + dur] = 1.0
        cols[:, i] = np.convolve(stim, hrf.samples)[:t]
    return DesignMatrix(cols, schedule.names)


@dataclass(frozen=True)
class NoiseModel:
    """Temporal noise covariance: identity or first-order autoregressive."""

    kind: str = "identity"
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "ar1"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "ar1":
            if self.rho is None or not -1.0 < self.rho < 1.0:
                raise ValueError("ar1 noise needs rho in (-1, 1)")

    def covariance(self, t: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(t)
        lags = np.abs(np.subtract.outer(np.arange(t), np.arange(t)))
        return self.rho ** lags


@dataclass(frozen=True)
class CorrelationMap:
    """Per-category regressor maps: (p, n_voxels) with a space tag."""

    maps: np.ndarray
    names: tuple[str, ...]
    space: str = "native"

    def __post_init__(self):
        maps = np.ascontiguousarray(self.maps, dtype=np.float64)
        if maps.ndim != 2:
            raise ValueError("maps must be a (p, n) matrix")
        if not np.all(np.isfinite(maps)):
            raise ValueError("regressor maps contain non-finite values")
        if len(self.names) != maps.shape[0]:
            raise ValueError("one name per category map required")
        if self.space not in ("native", "standard"):
            raise ValueError(f"unknown space tag {self.space!r}")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def p(self) -> int:
        return self.maps.shape[0]

    def category_map(self, i: int) -> np.ndarray:
        return self.maps[i]


def estimate_regressors(
    f: BoldSeries, d: DesignMatrix, noise: NoiseModel = NoiseModel()
) -> CorrelationMap:
    """Generalized least squares fit of the design to every voxel.

    Returns one coefficient map per category. Whitens with the Cholesky
    factor of the noise covariance instead of forming its inverse.
    """
    if f.t != d.t:
        raise ValueError(f"series has {f.t} samples but design has {d.t}")
    if d.t < d.p:
        raise ValueError(f"need at least as many samples ({d.t}) as columns ({d.p})")
    design = d.columns
    signal = f.samples
    if noise.kind != "identity":
        chol = np.linalg.cholesky(noise.covariance(d.t))
        design = solve_triangular(chol, design, lower=True)
        signal = solve_triangular(chol, signal, lower=True)
    cond = np.linalg.cond(design)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericalError(
            f"design matrix is rank-deficient (condition estimate {cond:.3e})"
        )
    beta, *_ = np.linalg.lstsq(design, signal, rcond=None)
    return CorrelationMap(beta, d.names, space="native")


def estimate_ar1_rho(f: BoldSeries, d: DesignMatrix) -> float:
    """Lag-1 autocorrelation of pooled ordinary-least-squares residuals."""
    beta, *_ = np.linalg.lstsq(d.columns, f.samples, rcond=None)
    resid = f.samples - d.columns @ beta
    num = float(np.sum(resid[1:] * resid[:-1]))
    den = float(np.sum(resid[:-1] ** 2))
    if den == 0.0:
        return 0.0
    return float(np.clip(num / den, -0.95, 0.95))
