"""Seeded training-time augmentation for (volume, mask) array pairs.

All randomness comes from a Philox counter-based generator
(:func:`make_rng`). Draw order per call is fixed and documented on each
function, so two runs with the same seed draw the same numbers.

Arrays here are plain ``numpy`` arrays indexed ``[x, y, z]``; the mask is
boolean (or 0/1) and always resampled with nearest-neighbour interpolation.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "AugmentConfig",
    "make_rng",
    "random_crop",
    "flip",
    "apply_geometric",
    "apply_intensity",
    "gamma_adjust",
    "patch_dropout",
    "patch_inversion",
    "augment_sample",
]


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: tuple[int, int, int] = (128, 128, 144)
    rotation_deg: tuple[float, float] = (-20.0, 20.0)
    rotation_axes: tuple[int, ...] = (0, 1, 2)
    flip_axes: tuple[bool, bool, bool] = (True, True, True)
    zoom_max: float = 0.15
    translate_max: float = 0.20
    intensity_scale_shift_max: float = 0.10
    noise_std_max: float = 0.10
    gamma_range: tuple[float, float] = (0.5, 2.0)
    patch_size: tuple[int, int, int] = (10, 10, 10)
    patch_max_count: int = 75
    per_transform_probability: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.per_transform_probability <= 1.0:
            raise ValueError("per_transform_probability must lie in [0, 1]")
        lo, hi = self.rotation_deg
        if lo > hi:
            raise ValueError("rotation range is empty")
        glo, ghi = self.gamma_range
        if not 0 < glo <= ghi:
            raise ValueError("gamma range must be positive and nonempty")
        if min(self.crop_size) < 1 or min(self.patch_size) < 1 or self.patch_max_count < 1:
            raise ValueError("crop size, patch size and patch count must be positive")
        if self.zoom_max < 0 or self.translate_max < 0 or self.intensity_scale_shift_max < 0:
            raise ValueError("augmentation magnitudes must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown augment keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _pad_to(arr: np.ndarray, size) -> np.ndarray:
    pad = []
    for n, s in zip(arr.shape, size):
        extra = max(0, s - n)
        pad.append((extra // 2, extra - extra // 2))
    if any(p != (0, 0) for p in pad):
        arr = np.pad(arr, pad, mode="constant")
    return arr


def random_crop(vol: np.ndarray, mask: np.ndarray, size, rng: np.random.Generator):
    """Same uniformly placed window for volume and mask.

    Axes shorter than ``size`` are zero-padded symmetrically first.
    Draws: one integer per axis (x, y, z).
    """
    if vol.shape != mask.shape:
        raise ValueError(f"volume {vol.shape} and mask {mask.shape} differ in shape")
    vol, mask = _pad_to(vol, size), _pad_to(mask, size)
    starts = [int(rng.integers(0, n - s + 1)) for n, s in zip(vol.shape, size)]
    window = tuple(slice(a, a + s) for a, s in zip(starts, size))
    return vol[window], mask[window]


def flip(vol: np.ndarray, mask: np.ndarray, axis: int):
    return np.flip(vol, axis=axis).copy(), np.flip(mask, axis=axis).copy()


def _rotation(axis: int, degrees: float) -> np.ndarray:
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    i, j = [a for a in range(3) if a != axis]
    rot = np.eye(3)
    rot[i, i], rot[i, j], rot[j, i], rot[j, j] = c, -s, s, c
    return rot


def apply_geometric(vol: np.ndarray, mask: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Rotation, flips, zoom and translation, each applied with probability p.

    Draw order: rotation gate, axis, angle; per-axis flip gate (x, y, z);
    zoom gate, factor; translation gate, three offsets. Parameters are drawn
    even when the gate is closed so the sequence length never varies.
    Rotation, zoom and translation are folded into one affine resampling about
    the volume centre; flips are exact index reversals.
    """
    p = cfg.per_transform_probability
    do_rot = rng.random() < p
    axis = cfg.rotation_axes[int(rng.integers(0, len(cfg.rotation_axes)))]
    angle = float(rng.uniform(*cfg.rotation_deg))
    flips = [rng.random() < p for _ in range(3)]
    do_zoom = rng.random() < p
    factor = float(rng.uniform(1.0 - cfg.zoom_max, 1.0 + cfg.zoom_max))
    do_shift = rng.random() < p
    offsets = rng.uniform(-cfg.translate_max, cfg.translate_max, size=3) * np.asarray(vol.shape)

    for ax, (allowed, hit) in enumerate(zip(cfg.flip_axes, flips)):
        if allowed and hit:
            vol, mask = flip(vol, mask, ax)

    if not (do_rot or do_zoom or do_shift):
        return vol, mask
    # forward map: y = c + A (x - c) + t  ->  x = c + A^-1 (y - c - t)
    forward = np.eye(3)
    if do_rot:
        forward = _rotation(axis, angle) @ forward
    if do_zoom:
        forward = factor * forward
    shift = offsets if do_shift else np.zeros(3)
    inverse = np.linalg.inv(forward)
    centre = (np.asarray(vol.shape) - 1) / 2.0
    offset = centre - inverse @ (centre + shift)
    out_vol = ndimage.affine_transform(
        vol.astype(np.float32), inverse, offset=offset, order=1, mode="constant", cval=0.0
    )
    out_mask = ndimage.affine_transform(
        np.asarray(mask).astype(np.uint8), inverse, offset=offset, order=0, mode="constant", cval=0
    )
    return out_vol, out_mask.astype(np.asarray(mask).dtype)


def gamma_adjust(vol: np.ndarray, gamma: float) -> np.ndarray:
    """Gamma on a min-max normalised copy, mapped back to the original range."""
    lo, hi = float(vol.min()), float(vol.max())
    if hi <= lo:
        return vol.copy()
    unit = (vol - lo) / (hi - lo)
    return (np.power(unit, gamma) * (hi - lo) + lo).astype(vol.dtype)


def _patch_corners(shape, size, count: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    return [
        tuple(int(rng.integers(0, max(1, n - s + 1))) for n, s in zip(shape, size)) for _ in range(count)
    ]


def patch_dropout(vol: np.ndarray, count: int, size, rng: np.random.Generator) -> np.ndarray:
    out = vol.copy()
    for corner in _patch_corners(vol.shape, size, count, rng):
        out[tuple(slice(c, c + s) for c, s in zip(corner, size))] = 0
    return out


def patch_inversion(vol: np.ndarray, count: int, size, rng: np.random.Generator) -> np.ndarray:
    """Reflect each patch about its own mean: v -> 2 * mean - v."""
    out = vol.copy()
    for corner in _patch_corners(vol.shape, size, count, rng):
        window = tuple(slice(c, c + s) for c, s in zip(corner, size))
        out[window] = 2 * out[window].mean() - out[window]
    return out


def apply_intensity(vol: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Scale/shift, gaussian noise, gamma and patch inversion-or-dropout.

    Draw order: scale-shift gate, scale, shift; noise gate, sigma, noise field;
    gamma gate, gamma; patch gate, inversion-vs-dropout coin, patch count,
    patch corners. A transform's parameters are only drawn when its gate
    opens. Shift and noise are relative to the volume's standard deviation.
    """
    p = cfg.per_transform_probability
    m = cfg.intensity_scale_shift_max
    out = np.asarray(vol, dtype=np.float32)
    spread = float(out.std()) or 1.0

    if rng.random() < p:
        scale = 1.0 + rng.uniform(-m, m)
        shift = rng.uniform(-m, m) * spread
        out = (out * scale + shift).astype(np.float32)
    if rng.random() < p:
        sigma = rng.uniform(0.0, cfg.noise_std_max) * spread
        out = (out + rng.normal(0.0, sigma, size=out.shape)).astype(np.float32)
    if rng.random() < p:
        out = gamma_adjust(out, float(rng.uniform(*cfg.gamma_range)))
    if rng.random() < p:
        invert = rng.random() < 0.5
        count = int(rng.integers(1, cfg.patch_max_count + 1))
        op = patch_inversion if invert else patch_dropout
        out = op(out, count, cfg.patch_size, rng)
    return out


def augment_sample(vol: np.ndarray, mask: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator | None = None):
    """Random crop, then geometric, then intensity transforms."""
    rng = make_rng(cfg.seed) if rng is None else rng
    vol, mask = random_crop(vol, mask, cfg.crop_size, rng)
    vol, mask = apply_geometric(vol, mask, cfg, rng)
    return apply_intensity(vol, cfg, rng), mask
