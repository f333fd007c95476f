"""Mapping native-space images to a standard reference grid.

A transform is an affine pull-back: for every target-grid voxel v the source
is sampled trilinearly at matrix @ v + translation (voxel units). Transform
selection maximizes normalized mutual information over a deterministic
search grid of translations and isotropic scales; one transform is found per
category and shared by all of that category's snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .glm import CorrelationMap
from .snapshot import Snapshot
from .volume import Volume3D


@dataclass(frozen=True)
class AffineTransform:
    matrix: np.ndarray       # 3x3 linear part
    translation: np.ndarray  # 3-vector, voxel units of the target grid
    source_dims: tuple[int, int, int]
    target_dims: tuple[int, int, int]

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.float64)
        tr = np.ascontiguousarray(self.translation, dtype=np.float64)
        if m.shape != (3, 3) or tr.shape != (3,):
            raise ValueError("need a 3x3 matrix and a 3-vector translation")
        if abs(np.linalg.det(m)) <= 1e-9:
            raise ValueError("linear part is singular")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "translation", tr)
        object.__setattr__(self, "source_dims", tuple(int(d) for d in self.source_dims))
        object.__setattr__(self, "target_dims", tuple(int(d) for d in self.target_dims))

    @property
    def is_identity(self) -> bool:
        return (
            self.source_dims == self.target_dims
            and np.array_equal(self.matrix, np.eye(3))
            and np.array_equal(self.translation, np.zeros(3))
        )

    def parameters(self) -> tuple[float, ...]:
        return tuple(self.matrix.ravel()) + tuple(self.translation)


def identity_transform(source_dims, target_dims=None) -> AffineTransform:
    return AffineTransform(
        np.eye(3), np.zeros(3), source_dims, target_dims or source_dims
    )


@dataclass(frozen=True)
class RegistrationConfig:
    """Search grid for transform selection; `identity` skips the search."""

    mode: str = "identity"
    histogram_bins: int = 32
    translation_range: float = 4.0
    translation_step: float = 1.0
    scale_min: float = 1.0
    scale_max: float = 1.0
    scale_step: float = 0.05

    def __post_init__(self):
        if self.mode not in ("identity", "search"):
            raise ValueError(f"unknown registration mode {self.mode!r}")
        if self.histogram_bins < 2:
            raise ValueError("need at least 2 histogram bins")
        if self.translation_range < 0 or self.translation_step <= 0:
            raise ValueError("bad translation search range")
        if self.scale_max < self.scale_min or self.scale_step <= 0:
            raise ValueError("bad scale search range")

    def translations(self) -> np.ndarray:
        r, s = self.translation_range, self.translation_step
        n = int(math.floor(r / s + 1e-9))
        return np.arange(-n, n + 1) * s

    def scales(self) -> np.ndarray:
        n = int(math.floor((self.scale_max - self.scale_min) / self.scale_step + 1e-9))
        return self.scale_min + np.arange(n + 1) * self.scale_step


def _bin_indices(values: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros(values.size, dtype=np.intp)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.intp)
    return np.minimum(idx, bins - 1)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(a: Volume3D, b: Volume3D, bins: int = 32) -> float:
    """Normalized mutual information (Ha + Hb) / Hab from a joint histogram.

    Equal-width bins over each image's own intensity range; the value lies
    in [1, 2], reaching 2 for identical images that occupy >= 2 bins.
    """
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    ia = _bin_indices(a.data, bins)
    ib = _bin_indices(b.data, bins)
    joint = np.bincount(ia * bins + ib, minlength=bins * bins).astype(np.float64)
    joint /= joint.sum()
    joint_2d = joint.reshape(bins, bins)
    h_a = _entropy(joint_2d.sum(axis=1))
    h_b = _entropy(joint_2d.sum(axis=0))
    h_ab = _entropy(joint)
    if h_ab == 0.0:
        return 2.0  # both images constant: degenerate, perfectly matched
    return (h_a + h_b) / h_ab


def apply_transform(image: np.ndarray, t: AffineTransform) -> np.ndarray:
    """Resample a native-space vector onto the target grid.

    Trilinear interpolation; samples falling outside the source grid are 0.
    Exact identity transforms return a bit-exact copy.
    """
    image = np.asarray(image, dtype=np.float64)
    n_source = int(np.prod(t.source_dims))
    if image.size != n_source:
        raise ValueError(
            f"image has {image.size} voxels but transform expects {n_source}"
        )
    if t.is_identity:
        return image.copy()
    nx, ny, nz = t.target_dims
    lin = np.arange(nx * ny * nz)
    target = np.stack([lin % nx, (lin // nx) % ny, lin // (nx * ny)])
    source = t.matrix @ target + t.translation[:, None]
    grid = image.reshape(t.source_dims, order="F")
    return map_coordinates(grid, source, order=1, mode="constant", cval=0.0)


def _candidate(scale, shift, source_dims, target_dims) -> AffineTransform:
    # isotropic scaling about the grid centers, then a voxel shift
    c_src = (np.asarray(source_dims, dtype=np.float64) - 1) / 2
    c_tgt = (np.asarray(target_dims, dtype=np.float64) - 1) / 2
    translation = c_src - scale * c_tgt + np.asarray(shift, dtype=np.float64)
    if scale == 1.0 and not translation.any() and source_dims == target_dims:
        return identity_transform(source_dims, target_dims)
    return AffineTransform(np.eye(3) * scale, translation, source_dims, target_dims)


def find_transform(
    moving: Volume3D, reference: Volume3D, cfg: RegistrationConfig
) -> AffineTransform:
    """Pick the grid candidate maximizing nmi(apply(moving, T), reference).

    The search is exhaustive over the configured translations and isotropic
    scales, evaluated in lexicographic parameter order; ties keep the first
    candidate, so results are deterministic.
    """
    if cfg.mode == "identity":
        return identity_transform(moving.dims, reference.dims)
    scales = cfg.scales()
    shifts = cfg.translations()
    if scales.size == 0 or shifts.size == 0:
        raise ValueError("empty registration search grid")
    best = None
    best_score = -np.inf
    for scale in scales:
        for sx in shifts:
            for sy in shifts:
                for sz in shifts:
                    cand = _candidate(
                        float(scale), (sx, sy, sz), moving.dims, reference.dims
                    )
                    resampled = Volume3D(
                        reference.dims,
                        apply_transform(moving.data, cand),
                        reference.voxel_size_mm,
                    )
                    score = nmi(resampled, reference, cfg.histogram_bins)
                    if score > best_score:
                        best, best_score = cand, score
    return best


def select_transform(
    snapshot: Snapshot,
    transforms: dict[int, AffineTransform],
    betas: CorrelationMap,
) -> tuple[AffineTransform, np.ndarray]:
    """Look up the category-shared transform and regressor map for a snapshot."""
    i = snapshot.category_index
    if i not in transforms:
        raise KeyError(f"no transform for category index {i} ({snapshot.category})")
    if not 0 <= i < betas.p:
        raise KeyError(f"no regressor map for category index {i}")
    return transforms[i], betas.category_map(i)


def save_transforms(transforms: dict[int, AffineTransform], names, path) -> None:
    """Persist per-category transforms as delimited text (see FORMATS.md)."""
    lines = [
        "category,m00,m01,m02,m10,m11,m12,m20,m21,m22,t0,t1,t2,"
        "src_x,src_y,src_z,tgt_x,tgt_y,tgt_z"
    ]
    for i in sorted(transforms):
        t = transforms[i]
        vals = [repr(float(v)) for v in t.parameters()]
        dims = [str(d) for d in t.source_dims + t.target_dims]
        lines.append(",".join([names[i], *vals, *dims]))
    from .volume import atomic_write_text

    atomic_write_text(path, "\n".join(lines) + "\n")


def load_transforms(path, names) -> dict[int, AffineTransform]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    out: dict[int, AffineTransform] = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        name = parts[0]
        vals = [float(v) for v in parts[1:13]]
        dims = [int(v) for v in parts[13:19]]
        out[names.index(name)] = AffineTransform(
            np.array(vals[:9]).reshape(3, 3),
            np.array(vals[9:12]),
            tuple(dims[:3]),
            tuple(dims[3:]),
        )
    return out
