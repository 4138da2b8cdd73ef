"""Four-stage preprocessing: isotropic resampling, head crop, clipping, normalisation.

Masks follow the intensity volume through the same geometric stages with
nearest-neighbour interpolation; :class:`PreprocMeta` records what was done
so a mask can be mapped forward (:func:`map_mask`) and back
(:func:`unmap_mask`).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING

import numpy as np

from .stats import percentile
from .volume import BinaryMask, ScalarVolume, _Grid

if TYPE_CHECKING:
    from .config import Config

__all__ = [
    "CropBox",
    "PreprocMeta",
    "resample_isotropic",
    "resample_to",
    "crop_to_head",
    "crop",
    "uncrop",
    "clip_intensities",
    "normalize_nonzero",
    "preprocess_pipeline",
    "map_mask",
    "unmap_mask",
]


# --------------------------------------------------------------------------
# resampling
# --------------------------------------------------------------------------


def _source_positions(n_out: int, ratio: float) -> np.ndarray:
    # Continuous input index of every output voxel centre. Both grids share the
    # low edge of the first voxel, so a ratio of 1 maps i -> i exactly.
    return (np.arange(n_out, dtype=np.float64) + 0.5) * ratio - 0.5


def _resample_axis(data: np.ndarray, axis: int, pos: np.ndarray, interpolation: str) -> np.ndarray:
    n_in = data.shape[axis]
    if interpolation == "nearest":
        idx = np.clip(np.floor(pos + 0.5).astype(np.int64), 0, n_in - 1)
        return np.take(data, idx, axis=axis)
    if n_in == 1:
        return np.take(data, np.zeros(pos.size, dtype=np.int64), axis=axis)
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    w = pos - lo
    shape = [1, 1, 1]
    shape[axis] = pos.size
    w = w.reshape(shape)
    a = np.take(data, lo, axis=axis)
    b = np.take(data, lo + 1, axis=axis)
    return a * (1.0 - w) + b * w


def resample_to(grid: _Grid, spacing, dims, interpolation: str = "linear") -> _Grid:
    """Resample onto a grid with the given spacing and dims sharing the low edge."""
    if interpolation not in ("linear", "nearest"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    spacing = tuple(float(s) for s in spacing)
    if min(spacing) <= 0:
        raise ValueError(f"target spacing must be positive, got {spacing}")
    if interpolation == "linear" and isinstance(grid, BinaryMask):
        raise ValueError("masks must be resampled with nearest interpolation")
    data = grid.data if interpolation == "nearest" else grid.data.astype(np.float64)
    first = []
    for axis in range(3):
        ratio = spacing[axis] / grid.spacing[axis]
        pos = _source_positions(int(dims[axis]), ratio)
        data = _resample_axis(data, axis, pos, interpolation)
        first.append(pos[0] * grid.spacing[axis])
    origin = np.asarray(grid.origin) + grid.direction @ np.asarray(first)
    return type(grid)(data, spacing, tuple(origin), grid.direction)


def _target_dims(dims, spacing, target) -> tuple[int, int, int]:
    return tuple(max(1, int(np.floor(n * s / t + 0.5))) for n, s, t in zip(dims, spacing, target))  # type: ignore[return-value]


def resample_isotropic(vol: _Grid, target_spacing=(1.0, 1.0, 1.0), interpolation: str = "linear") -> _Grid:
    """Resample to ``target_spacing`` (trilinear for intensities, nearest for labels).

    Output dims are ``round(dims * spacing / target_spacing)``, at least 1.
    """
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or min(target) <= 0:
        raise ValueError(f"target spacing must be three positive values, got {target_spacing}")
    dims = _target_dims(vol.dims, vol.spacing, target)
    return resample_to(vol, target, dims, interpolation)


# --------------------------------------------------------------------------
# cropping
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CropBox:
    start: tuple[int, int, int]
    stop: tuple[int, int, int]

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in zip(self.start, self.stop))  # type: ignore[return-value]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.start, self.stop))  # type: ignore[return-value]


def crop(grid: _Grid, box: CropBox) -> _Grid:
    origin = grid.index_to_world(np.asarray(box.start))
    return type(grid)(grid.data[box.slices], grid.spacing, tuple(origin), grid.direction)


def uncrop(grid: _Grid, box: CropBox, full_dims) -> _Grid:
    """Inverse of :func:`crop`: embed into a zero grid of ``full_dims``."""
    data = np.zeros(tuple(full_dims), dtype=grid.data.dtype)
    data[box.slices] = grid.data
    origin = grid.index_to_world(-np.asarray(box.start))
    return type(grid)(data, grid.spacing, tuple(origin), grid.direction)


def crop_to_head(vol: ScalarVolume, threshold_fraction: float = 0.02, margin: int = 2):
    """Tight axis-aligned crop around voxels brighter than a fraction of the max.

    Returns ``(cropped, box)``. Volumes with no foreground come back whole.
    """
    peak = float(vol.data.max())
    full = CropBox((0, 0, 0), vol.dims)
    if peak <= 0:
        return vol, full
    fg = vol.data > threshold_fraction * peak
    if not fg.any():
        return vol, full
    start, stop = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(fg.any(axis=other))
        start.append(max(0, int(hit[0]) - margin))
        stop.append(min(vol.dims[axis], int(hit[-1]) + 1 + margin))
    box = CropBox(tuple(start), tuple(stop))  # type: ignore[arg-type]
    return crop(vol, box), box


# --------------------------------------------------------------------------
# intensity
# --------------------------------------------------------------------------


def clip_intensities(vol: ScalarVolume, low_pct: float = 0.0, high_pct: float = 99.5) -> ScalarVolume:
    if not 0.0 <= low_pct < high_pct <= 100.0:
        raise ValueError(f"need 0 <= low_pct < high_pct <= 100, got {low_pct}, {high_pct}")
    lo = percentile(vol.data, low_pct)
    hi = percentile(vol.data, high_pct)
    return vol.with_data(np.clip(vol.data, np.float32(lo), np.float32(hi)))


def normalize_nonzero(vol: ScalarVolume, mode: str = "zscore") -> ScalarVolume:
    """Zero-mean (and by default unit-std) normalisation over nonzero voxels.

    Zeros stay exactly zero. With fewer than two nonzero voxels, or zero
    spread, only the mean is removed.
    """
    if mode not in ("zscore", "mean"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    nz = vol.data != 0
    if not nz.any():
        return vol
    values = vol.data[nz].astype(np.float64)
    mean = values.mean()
    std = values.std()
    out = values - mean
    if mode == "zscore" and values.size > 1 and std > 0:
        out /= std
    data = np.zeros(vol.dims, dtype=np.float32)
    data[nz] = out
    return vol.with_data(data)


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PreprocMeta:
    original_dims: tuple[int, int, int]
    original_spacing: tuple[float, float, float]
    original_origin: tuple[float, float, float]
    original_direction: tuple[tuple[float, ...], ...]
    resampled_dims: tuple[int, int, int]
    target_spacing: tuple[float, float, float]
    crop_start: tuple[int, int, int]
    crop_stop: tuple[int, int, int]

    @property
    def crop_box(self) -> CropBox:
        return CropBox(self.crop_start, self.crop_stop)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PreprocMeta":
        raw = json.loads(text)
        raw["original_direction"] = tuple(tuple(row) for row in raw["original_direction"])
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})


def preprocess_pipeline(vol: ScalarVolume, config: "Config | None" = None):
    """Resample to 1 mm, crop to the head, clip to [0, 99.5]%, normalise nonzero voxels.

    Returns ``(volume, meta)``.
    """
    if config is None:
        from .config import Config

        config = Config()
    resampled = resample_isotropic(vol, config.target_spacing, "linear")
    cropped, box = crop_to_head(resampled, config.head_threshold_fraction, config.crop_margin)
    clipped = clip_intensities(cropped, config.clip_low_pct, config.clip_high_pct)
    out = normalize_nonzero(clipped, config.normalization)
    meta = PreprocMeta(
        original_dims=vol.dims,
        original_spacing=vol.spacing,
        original_origin=vol.origin,
        original_direction=tuple(tuple(float(x) for x in row) for row in vol.direction),
        resampled_dims=resampled.dims,
        target_spacing=tuple(float(t) for t in config.target_spacing),  # type: ignore[arg-type]
        crop_start=box.start,
        crop_stop=box.stop,
    )
    return out, meta


def map_mask(mask: BinaryMask, meta: PreprocMeta) -> BinaryMask:
    """Carry a mask from original space into preprocessed space."""
    resampled = resample_to(mask, meta.target_spacing, meta.resampled_dims, "nearest")
    return crop(resampled, meta.crop_box)


def unmap_mask(mask: BinaryMask, meta: PreprocMeta) -> BinaryMask:
    """Carry a preprocessed-space mask back onto the original grid."""
    full = uncrop(mask, meta.crop_box, meta.resampled_dims)
    return resample_to(full, meta.original_spacing, meta.original_dims, "nearest")
