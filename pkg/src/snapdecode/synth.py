"""Deterministic synthetic experiment generator with known ground truth.

Each category drives a fixed set of informative atlas regions; the clean
signal is the design response times the true coefficient map. Noise is
white Gaussian (optionally AR(1)-correlated in time) plus a slow per-voxel
drift built from a few low-frequency harmonics. The drift is what makes the
raw per-category mean images correlate with each other, the way shared
slow structure does in real recordings; the regressor weighting of the
feature stage suppresses it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .glm import build_design, canonical_hrf
from .pipeline import Experiment, PipelineSettings
from .volume import (
    Atlas,
    BoldSeries,
    CategoryEvents,
    OnsetSchedule,
    Volume3D,
    atlas_from_labels,
)




@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    subjects: int = 8
    categories: int = 2
    events_per_category: int = 6
    t: int = 288
    tr_seconds: float = 1.0
    dims: tuple[int, int, int] = (12, 12, 12)
    regions: int = 20
    informative_per_category: int = 3
    amplitude: float = 1.0
    noise_std: float = 0.5
    global_std: float = 5.0
    ar1_rho: float = 0.0
    design: str = "block"          # block | event
    block_duration: int = 4
    spacing: int = 20
    onset_start: int = 10
    hrf_length_seconds: float = 32.0

    def __post_init__(self):
        if self.design not in ("block", "event"):
            raise ConfigError(f"unknown design type {self.design!r}")
        if self.subjects < 1 or self.categories < 1 or self.events_per_category < 1:
            raise ConfigError("need at least one subject, category and event")
        if self.regions < self.categories * self.informative_per_category:
            raise ConfigError(
                f"{self.regions} regions cannot hold "
                f"{self.categories * self.informative_per_category} informative ones"
            )
        if self.noise_std < 0 or self.global_std < 0 or self.amplitude < 0:
            raise ConfigError("amplitudes and noise levels must be non-negative")
        if not -1.0 < self.ar1_rho < 1.0:
            raise ConfigError("ar1_rho must lie in (-1, 1)")
        n_events = self.categories * self.events_per_category
        duration = self.event_duration
        last_onset = self.onset_start + (n_events - 1) * self.spacing
        tail = int(self.hrf_length_seconds / self.tr_seconds + 1e-9)
        if last_onset + duration + tail > self.t:
            raise ConfigError(
                f"event packing infeasible: need "
                f"{last_onset + duration + tail} samples, have {self.t}"
            )

    @property
    def event_duration(self) -> int:
        return self.block_duration if self.design == "block" else 1

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def category_names(self) -> tuple[str, ...]:
        return tuple(f"cat{i}" for i in range(self.categories))


@dataclass(frozen=True)
class GroundTruth:
    """Hidden generator state for oracle tests and manifests."""

    config: SynthConfig
    true_beta: np.ndarray                       # (p, n) clean coefficient maps
    informative_regions: dict[str, tuple[int, ...]]
    peak_times: dict[str, tuple[int, ...]]      # per-event response maxima
    design_peak_value: float                    # response height at those maxima

    def to_json(self) -> str:
        payload = {
            "config": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self.config).items()
            },
            "informative_regions": {
                k: list(v) for k, v in self.informative_regions.items()
            },
            "peak_times": {k: list(v) for k, v in self.peak_times.items()},
            "design_peak_value": self.design_peak_value,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _slab_atlas(cfg: SynthConfig) -> Atlas:
    labels = np.zeros(cfg.n_voxels, dtype=np.int32)
    for region, chunk in enumerate(
        np.array_split(np.arange(cfg.n_voxels), cfg.regions), start=1
    ):
        labels[chunk] = region
    return atlas_from_labels(Volume3D(cfg.dims, labels))


def _schedule(cfg: SynthConfig) -> OnsetSchedule:
    duration = cfg.event_duration
    onsets: list[list[int]] = [[] for _ in range(cfg.categories)]
    for e in range(cfg.categories * cfg.events_per_category):
        onsets[e % cfg.categories].append(cfg.onset_start + e * cfg.spacing)
    return OnsetSchedule(
        tuple(
            CategoryEvents(name, tuple(o), (duration,) * len(o))
            for name, o in zip(cfg.category_names(), onsets)
        )
    )


def _global_waveform(design_columns: np.ndarray, peak_times: dict, t: int) -> np.ndarray:
    """Stimulus-locked waveform of the nonspecific global fluctuation.

    Bumps sit at every response peak (any category) so raw snapshots pick
    them up in full, but the design-span component is projected out, so the
    least-squares regressor maps are exactly blind to it. Scaled so the
    average value over the response peaks is 1.
    """
    comb = np.zeros(t)
    bump = np.array([0.6, 0.9, 1.0, 0.9, 0.6])
    peaks = sorted(j for times in peak_times.values() for j in times)
    for j in peaks:
        lo = max(0, j - 2)
        hi = min(t, j + 3)
        comb[lo:hi] = np.maximum(comb[lo:hi], bump[lo - (j - 2) : hi - (j - 2)])
    coef, *_ = np.linalg.lstsq(design_columns, comb, rcond=None)
    perp = comb - design_columns @ coef
    return perp / perp[peaks].mean()


def _noise(
    rng: np.random.Generator, waveform: np.ndarray, n: int, cfg: SynthConfig
) -> np.ndarray:
    """White (optionally AR(1)) voxel noise plus a nonspecific global response.

    The global part drives every voxel with the same stimulus-locked
    waveform, scaled per voxel by a random gain. Raw snapshots therefore
    share a category-free pattern, which is what makes their per-category
    means correlate; the regressor maps cannot see it (the waveform is
    orthogonal to the design columns), so the feature stage suppresses it.
    """
    t = waveform.size
    white = (
        rng.normal(scale=cfg.noise_std, size=(t, n))
        if cfg.noise_std
        else np.zeros((t, n))
    )
    if cfg.ar1_rho != 0.0 and cfg.noise_std:
        rho = cfg.ar1_rho
        out = np.empty_like(white)
        out[0] = white[0]
        scale = np.sqrt(1.0 - rho**2)
        for j in range(1, t):
            out[j] = rho * out[j - 1] + scale * white[j]
        white = out
    if cfg.global_std:
        gains = rng.normal(scale=cfg.global_std, size=n)
        white = white + np.outer(waveform, gains)
    return white


def generate(cfg: SynthConfig) -> tuple[Experiment, GroundTruth]:
    """Build a reproducible multi-subject experiment plus its ground truth.

    The same seed always yields bit-identical data; subjects draw from
    independent child streams of the master seed.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.subjects + 1)
    shared_rng = np.random.default_rng(seeds[0])

    atlas = _slab_atlas(cfg)
    schedule = _schedule(cfg)
    hrf = canonical_hrf(cfg.tr_seconds, cfg.hrf_length_seconds)
    design = build_design(schedule, hrf, cfg.t)

    chosen = shared_rng.choice(
        cfg.regions, cfg.categories * cfg.informative_per_category, replace=False
    )
    informative = {
        name: tuple(
            sorted(
                int(r) + 1
                for r in chosen[
                    i * cfg.informative_per_category : (i + 1)
                    * cfg.informative_per_category
                ]
            )
        )
        for i, name in enumerate(cfg.category_names())
    }
    # per-event response maximum of an isolated event (events are spaced so
    # responses of the same category never overlap)
    single = build_design(
        OnsetSchedule((CategoryEvents("e", (0,), (cfg.event_duration,)),)),
        hrf,
        cfg.event_duration + hrf.samples.size,
    )
    offset = int(np.argmax(single.columns[:, 0]))
    peak_value = float(single.columns[offset, 0])
    peak_times = {
        cat.name: tuple(onset + offset for onset in cat.onsets)
        for cat in schedule.categories
    }

    true_beta = np.zeros((cfg.categories, cfg.n_voxels))
    for i, name in enumerate(cfg.category_names()):
        for region in informative[name]:
            true_beta[i, atlas.region_voxels(region)] = cfg.amplitude

    clean = design.columns @ true_beta
    waveform = _global_waveform(design.columns, peak_times, cfg.t)
    subjects = []
    for u in range(cfg.subjects):
        rng = np.random.default_rng(seeds[u + 1])
        samples = clean + _noise(rng, waveform, cfg.n_voxels, cfg)
        subjects.append(
            (
                BoldSeries(f"sub{u:02d}", samples, cfg.tr_seconds, cfg.dims),
                schedule,
            )
        )

    reference = Volume3D(cfg.dims, true_beta.mean(axis=0))
    experiment = Experiment(
        subjects=tuple(subjects),
        atlas=atlas,
        reference=reference,
        settings=PipelineSettings(),
    )
    truth = GroundTruth(
        config=cfg,
        true_beta=true_beta,
        informative_regions=informative,
        peak_times=peak_times,
        design_peak_value=peak_value,
    )
    return experiment, truth
