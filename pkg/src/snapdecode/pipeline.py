"""Per-subject orchestration of the two extraction stages.

Stage one builds the design, estimates regressor maps and picks snapshots;
stage two maps everything to the reference grid, weights by the category
regressors, segments by atlas and denoises region-by-region. Both stages
use only the subject's own data, so features can be computed once per
subject and reused across cross-validation folds without leakage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .feature import (
    FeatureVector,
    detect_active,
    segment,
    smooth_regions,
    weight_snapshot,
)
from .glm import (
    CorrelationMap,
    DesignMatrix,
    NoiseModel,
    build_design,
    canonical_hrf,
    estimate_regressors,
)
from .register import (
    AffineTransform,
    RegistrationConfig,
    apply_transform,
    find_transform,
    select_transform,
)
from .snapshot import (
    SmoothedDesign,
    SnapshotSet,
    extract_snapshots,
    gaussian_kernel,
    smooth_design,
)
from .volume import Atlas, BoldSeries, OnsetSchedule, Volume3D


@dataclass(frozen=True)
class PipelineSettings:
    sigma_g: float = 1.0
    svm_c: float = 1.0
    hrf_length_seconds: float = 32.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)

    def __post_init__(self):
        if self.sigma_g <= 0:
            raise ValueError(f"sigma_g must be positive, got {self.sigma_g}")
        if self.svm_c <= 0:
            raise ValueError(f"svm_c must be positive, got {self.svm_c}")
        if self.hrf_length_seconds <= 0:
            raise ValueError("hrf_length_seconds must be positive")

    def echo(self) -> dict:
        return {
            "sigma_g": self.sigma_g,
            "svm_c": self.svm_c,
            "hrf_length_seconds": self.hrf_length_seconds,
            "noise_kind": self.noise.kind,
            "noise_rho": self.noise.rho,
            "registration_mode": self.registration.mode,
            "histogram_bins": self.registration.histogram_bins,
        }


@dataclass(frozen=True)
class SubjectArtifacts:
    subject_id: str
    design: DesignMatrix
    smoothed: SmoothedDesign
    betas: CorrelationMap
    snapshots: SnapshotSet
    transforms: dict[int, AffineTransform]
    betas_standard: CorrelationMap
    features: tuple[FeatureVector, ...]


def snapshot_stage(
    bold: BoldSeries, schedule: OnsetSchedule, settings: PipelineSettings
):
    """Design, smoothed design, regressor maps and snapshots for one subject."""
    hrf = canonical_hrf(bold.tr_seconds, settings.hrf_length_seconds)
    design = build_design(schedule, hrf, bold.t)
    betas = estimate_regressors(bold, design, settings.noise)
    smoothed = smooth_design(design, gaussian_kernel(settings.sigma_g))
    snapshots = extract_snapshots(bold, smoothed, schedule)
    return design, smoothed, betas, snapshots


def feature_stage(
    bold: BoldSeries,
    betas: CorrelationMap,
    snapshots: SnapshotSet,
    atlas: Atlas,
    reference: Volume3D,
    settings: PipelineSettings,
):
    """Map snapshots to the reference grid and extract region features."""
    transforms: dict[int, AffineTransform] = {}
    standard_maps = np.zeros((betas.p, reference.n))
    for i in range(betas.p):
        moving = Volume3D(bold.dims, betas.category_map(i), bold.voxel_size_mm)
        transforms[i] = find_transform(moving, reference, settings.registration)
        standard_maps[i] = apply_transform(betas.category_map(i), transforms[i])
    betas_standard = CorrelationMap(standard_maps, betas.names, space="standard")
    features = []
    for snap in snapshots.snapshots:
        transform, beta_star = select_transform(snap, transforms, betas_standard)
        psi = apply_transform(snap.image, transform)
        theta = weight_snapshot(
            psi, beta_star, snapshot_id=snap.snapshot_id, category=snap.category
        )
        slices = segment(theta, atlas)
        active = detect_active(slices, snap.snapshot_id)
        kept = [s for s in slices if s.region_id in active.regions]
        features.append(
            smooth_regions(
                kept, snapshot_id=snap.snapshot_id, category=snap.category
            )
        )
    return transforms, betas_standard, tuple(features)


def featurize_subject(
    bold: BoldSeries,
    schedule: OnsetSchedule,
    atlas: Atlas,
    reference: Volume3D,
    settings: PipelineSettings,
) -> SubjectArtifacts:
    design, smoothed, betas, snapshots = snapshot_stage(bold, schedule, settings)
    transforms, betas_standard, features = feature_stage(
        bold, betas, snapshots, atlas, reference, settings
    )
    return SubjectArtifacts(
        subject_id=bold.subject_id,
        design=design,
        smoothed=smoothed,
        betas=betas,
        snapshots=snapshots,
        transforms=transforms,
        betas_standard=betas_standard,
        features=features,
    )


@dataclass(frozen=True)
class Experiment:
    """Multi-subject data plus everything shared across subjects."""

    subjects: tuple[tuple[BoldSeries, OnsetSchedule], ...]
    atlas: Atlas
    reference: Volume3D
    settings: PipelineSettings = field(default_factory=PipelineSettings)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise ValueError("experiment needs at least one subject")
        vocab = subjects[0][1].names
        for bold, schedule in subjects:
            if schedule.names != vocab:
                raise ValueError(
                    f"subject {bold.subject_id} has a different category vocabulary"
                )
        ids = [b.subject_id for b, _ in subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate subject ids")
        object.__setattr__(self, "subjects", subjects)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def category_names(self) -> tuple[str, ...]:
        return self.subjects[0][1].names
