"""Spatial data model: 3D volumes, BOLD time series, atlases, onset schedules.

All 3D data uses a single linearization convention: voxel (x, y, z) lives at
linear index x + nx*(y + ny*z), i.e. x varies fastest. Every module that maps
between grid and linear coordinates goes through this file.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, VolumeFormatError

VOLUME_MAGIC = b"MRNR"
VOLUME_VERSION = 1
SERIES_MAGIC = b"MRNB"
SERIES_VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<i4")}
_CODE_FOR_KIND = {"f": 1, "i": 2}

_VOLUME_HEADER = struct.Struct("<4sHBBIIIddd")
_SERIES_HEADER = struct.Struct("<4sHHIIIddddI")

# refuse headers that would imply petabyte payloads rather than OOM-ing
_MAX_VOXELS = 2**31


def linear_index(x, y, z, dims):
    """Linear index of voxel (x, y, z) on a grid with the given dims."""
    nx, ny, _ = dims
    return x + nx * (y + ny * z)


def linear_coords(i, dims):
    """Inverse of linear_index: (x, y, z) for a linear index."""
    nx, ny, _ = dims
    return i % nx, (i // nx) % ny, i // (nx * ny)


@dataclass(frozen=True)
class Volume3D:
    """A single brain image: flat data vector plus grid metadata."""

    dims: tuple[int, int, int]
    data: np.ndarray
    voxel_size_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        data = np.asarray(self.data)
        if data.dtype.kind not in "fiu":
            raise ValueError(f"unsupported voxel dtype {data.dtype}")
        if data.dtype.kind == "f":
            data = np.ascontiguousarray(data, dtype=np.float64).reshape(-1)
        else:
            data = np.ascontiguousarray(data, dtype=np.int32).reshape(-1)
        if data.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(
                f"data length {data.size} does not match dims {dims}"
            )
        if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        vs = tuple(float(s) for s in self.voxel_size_mm)
        if len(vs) != 3 or any(s <= 0 for s in vs):
            raise ValueError(f"voxel sizes must be positive, got {self.voxel_size_mm}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size_mm", vs)

    @property
    def n(self) -> int:
        return self.data.size

    def grid(self) -> np.ndarray:
        """View of the data as a (nx, ny, nz) array (x fastest in memory)."""
        return self.data.reshape(self.dims, order="F")

    @classmethod
    def from_grid(cls, grid, voxel_size_mm=(1.0, 1.0, 1.0)) -> "Volume3D":
        grid = np.asarray(grid)
        if grid.ndim != 3:
            raise ValueError("from_grid expects a 3D array")
        return cls(grid.shape, grid.ravel(order="F"), voxel_size_mm)


def write_volume(v: Volume3D, path) -> None:
    """Write a volume in the binary little-endian format (see FORMATS.md)."""
    data = v.data
    if data.dtype.kind == "f":
        if not np.all(np.isfinite(data)):
            raise ValueError("refusing to write volume with non-finite values")
        code = _CODE_FOR_KIND["f"]
    else:
        code = _CODE_FOR_KIND["i"]
    header = _VOLUME_HEADER.pack(
        VOLUME_MAGIC, VOLUME_VERSION, code, 0, *v.dims, *v.voxel_size_mm
    )
    payload = np.ascontiguousarray(data, dtype=_DTYPE_CODES[code]).tobytes()
    _atomic_write(path, header + payload)


def read_volume(path) -> Volume3D:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _VOLUME_HEADER.size:
        raise VolumeFormatError(f"{path}: file shorter than volume header")
    magic, version, code, reserved, nx, ny, nz, sx, sy, sz = _VOLUME_HEADER.unpack(
        raw[: _VOLUME_HEADER.size]
    )
    if magic != VOLUME_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if version != VOLUME_VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise VolumeFormatError(f"{path}: unknown dtype code {code}")
    if reserved != 0:
        raise VolumeFormatError(f"{path}: reserved byte must be 0, got {reserved}")
    if min(nx, ny, nz) == 0 or nx * ny * nz > _MAX_VOXELS:
        raise VolumeFormatError(f"{path}: bad dims ({nx},{ny},{nz})")
    dtype = _DTYPE_CODES[code]
    expected = nx * ny * nz * dtype.itemsize
    body = raw[_VOLUME_HEADER.size :]
    if len(body) < expected:
        raise VolumeFormatError(
            f"{path}: truncated payload ({len(body)} bytes, expected {expected})"
        )
    if len(body) > expected:
        raise VolumeFormatError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(body, dtype=dtype).copy()
    return Volume3D((nx, ny, nz), data, (sx, sy, sz))


@dataclass(frozen=True)
class BoldSeries:
    """One subject's time-by-voxel signal matrix plus sampling metadata."""

    subject_id: str
    samples: np.ndarray          # (t, m)
    tr_seconds: float
    dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError("samples must be a (t, m) matrix")
        if not np.all(np.isfinite(samples)):
            raise ValueError("BOLD samples contain non-finite values")
        if self.tr_seconds <= 0:
            raise ValueError(f"tr_seconds must be positive, got {self.tr_seconds}")
        dims = tuple(int(d) for d in self.dims)
        if samples.shape[1] != dims[0] * dims[1] * dims[2]:
            raise ValueError(
                f"voxel count {samples.shape[1]} does not match dims {dims}"
            )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(
            self, "voxel_size_mm", tuple(float(s) for s in self.voxel_size_mm)
        )

    @property
    def t(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]


def write_bold(series: BoldSeries, path) -> None:
    sid = series.subject_id.encode("utf-8")
    if len(sid) > 0xFFFF:
        raise ValueError("subject_id too long")
    header = _SERIES_HEADER.pack(
        SERIES_MAGIC,
        SERIES_VERSION,
        0,
        *series.dims,
        *series.voxel_size_mm,
        series.tr_seconds,
        series.t,
    )
    body = struct.pack("<H", len(sid)) + sid + series.samples.astype("<f8").tobytes()
    _atomic_write(path, header + body)


def read_bold(path) -> BoldSeries:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SERIES_HEADER.size + 2:
        raise VolumeFormatError(f"{path}: file shorter than series header")
    (magic, version, reserved, nx, ny, nz, sx, sy, sz, tr, t) = _SERIES_HEADER.unpack(
        raw[: _SERIES_HEADER.size]
    )
    if magic != SERIES_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if version != SERIES_VERSION or reserved != 0:
        raise VolumeFormatError(f"{path}: unsupported series header")
    off = _SERIES_HEADER.size
    (id_len,) = struct.unpack_from("<H", raw, off)
    off += 2
    sid = raw[off : off + id_len].decode("utf-8")
    off += id_len
    m = nx * ny * nz
    expected = t * m * 8
    body = raw[off:]
    if len(body) != expected:
        raise VolumeFormatError(
            f"{path}: payload is {len(body)} bytes, expected {expected}"
        )
    samples = np.frombuffer(body, dtype="<f8").copy().reshape(t, m)
    return BoldSeries(sid, samples, tr, (nx, ny, nz), (sx, sy, sz))


@dataclass(frozen=True)
class CategoryEvents:
    name: str
    onsets: tuple[int, ...]
    durations: tuple[int, ...]

    def __post_init__(self):
        onsets = tuple(int(o) for o in self.onsets)
        durations = tuple(int(d) for d in self.durations)
        if len(onsets) != len(durations):
            raise ValueError(f"category {self.name}: onsets/durations length mismatch")
        if any(o < 0 for o in onsets):
            raise ValueError(f"category {self.name}: negative onset")
        if any(d < 1 for d in durations):
            raise ValueError(f"category {self.name}: durations must be >= 1")
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ValueError(f"category {self.name}: onsets must be strictly increasing")
        object.__setattr__(self, "onsets", onsets)
        object.__setattr__(self, "durations", durations)


@dataclass(frozen=True)
class OnsetSchedule:
    categories: tuple[CategoryEvents, ...]

    def __post_init__(self):
        cats = tuple(self.categories)
        if len(cats) < 1:
            raise ValueError("schedule needs at least one category")
        names = [c.name for c in cats]
        if len(set(names)) != len(names):
            raise ValueError("duplicate category names in schedule")
        object.__setattr__(self, "categories", cats)

    @property
    def p(self) -> int:
        return len(self.categories)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)


def write_onsets(schedule: OnsetSchedule, path) -> None:
    lines = ["category,onset_sample,duration_samples"]
    for cat in schedule.categories:
        for onset, dur in zip(cat.onsets, cat.durations):
            lines.append(f"{cat.name},{onset},{dur}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_onsets(path) -> OnsetSchedule:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != [
        "category",
        "onset_sample",
        "duration_samples",
    ]:
        raise DataError(f"{path}: missing or bad onset header row")
    events: dict[str, list[tuple[int, int]]] = {}
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"{path}:{i}: expected 3 fields, got {len(row)}")
        name, onset, dur = row[0].strip(), row[1], row[2]
        try:
            events.setdefault(name, []).append((int(onset), int(dur)))
        except ValueError as e:
            raise DataError(f"{path}:{i}: non-integer onset/duration") from e
    cats = tuple(
        CategoryEvents(name, tuple(o for o, _ in evs), tuple(d for _, d in evs))
        for name, evs in events.items()
    )
    return OnsetSchedule(cats)


@dataclass(frozen=True)
class Atlas:
    """Integer label volume with a per-region index of linear voxel positions.

    Label 0 is background and never a region; regions are 1..L.
    """

    labels: Volume3D
    L: int
    region_index: tuple[np.ndarray, ...] = field(repr=False)

    def region_voxels(self, region_id: int) -> np.ndarray:
        if not 1 <= region_id <= self.L:
            raise KeyError(f"region {region_id} not in atlas (1..{self.L})")
        return self.region_index[region_id - 1]

    def region_size(self, region_id: int) -> int:
        return self.region_voxels(region_id).size

    @property
    def n(self) -> int:
        return self.labels.n


def atlas_from_labels(labels: Volume3D) -> Atlas:
    """Index an integer label volume into per-region voxel lists."""
    data = labels.data
    if data.dtype.kind == "f":
        if not np.array_equal(data, np.rint(data)):
            raise VolumeFormatError("atlas labels must be integer-valued")
        data = data.astype(np.int64)
    if data.size and data.min() < 0:
        raise VolumeFormatError("atlas labels must be non-negative")
    max_label = int(data.max()) if data.size else 0
    index = tuple(
        np.flatnonzero(data == region) for region in range(1, max_label + 1)
    )
    return Atlas(labels=labels, L=max_label, region_index=index)


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))
