"""Patch tiling and overlap-averaged stitching around a pluggable predictor.

A predictor is any callable taking a :class:`ScalarVolume` patch and
returning a probability array (or :class:`ProbabilityMap`) of the same dims.
Patches carry their true world geometry, so a predictor can tell where in the
full volume it is looking.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Union

import numpy as np

from .volume import ProbabilityMap, ScalarVolume, load_probability

__all__ = [
    "TileGrid",
    "Predictor",
    "PredictorError",
    "plan_tiles",
    "stitch",
    "ConstantPredictor",
    "FieldPredictor",
    "SpherePredictor",
    "VolumePredictor",
    "parse_predictor",
]


class PredictorError(ValueError):
    pass


class Predictor(Protocol):
    def __call__(self, patch: ScalarVolume) -> Union[np.ndarray, ProbabilityMap]: ...


@dataclass(frozen=True)
class TileGrid:
    dims: tuple[int, int, int]
    patch_size: tuple[int, int, int]
    stride: tuple[int, int, int]
    padded_dims: tuple[int, int, int]
    pad_before: tuple[int, int, int]
    windows: tuple[tuple[int, int, int], ...]


def _triple(value) -> tuple[int, int, int]:
    if np.isscalar(value):
        value = (value,) * 3
    out = tuple(int(v) for v in value)
    if len(out) != 3:
        raise ValueError(f"expected 3 values, got {value}")
    return out  # type: ignore[return-value]


def _axis_starts(n: int, patch: int, stride: int) -> list[int]:
    count = max(1, math.ceil((n - patch) / stride) + 1)
    return [min(i * stride, n - patch) for i in range(count)]


def plan_tiles(dims, patch_size=160, overlap: float = 0.5) -> TileGrid:
    """Lay out patch windows with stride ``ceil(patch * (1 - overlap))``.

    Axes shorter than the patch are zero-padded (symmetrically) up to it; the
    last window on each axis is pulled back to end exactly at the edge.
    """
    dims, patch = _triple(dims), _triple(patch_size)
    if min(patch) < 1:
        raise ValueError(f"patch size must be positive, got {patch}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    stride = tuple(max(1, math.ceil(p * (1.0 - overlap))) for p in patch)
    padded = tuple(max(n, p) for n, p in zip(dims, patch))
    pad_before = tuple((pn - n) // 2 for pn, n in zip(padded, dims))
    starts = [_axis_starts(n, p, s) for n, p, s in zip(padded, patch, stride)]
    windows = tuple((x, y, z) for x in starts[0] for y in starts[1] for z in starts[2])
    return TileGrid(dims, patch, stride, padded, pad_before, windows)  # type: ignore[arg-type]


def _check_output(out, shape) -> np.ndarray:
    arr = np.asarray(out.data if isinstance(out, ProbabilityMap) else out, dtype=np.float64)
    if arr.shape != tuple(shape):
        raise PredictorError(f"predictor returned shape {arr.shape}, expected {tuple(shape)}")
    if not np.all((arr >= 0) & (arr <= 1)):
        raise PredictorError("predictor returned values outside [0, 1]")
    return arr


def stitch(vol: ScalarVolume, predictor: Predictor, grid: TileGrid | None = None, jobs: int = 1) -> ProbabilityMap:
    """Run ``predictor`` over every window and average overlapping outputs.

    Accumulation happens in window order, so the result does not depend on
    how predictions are scheduled across ``jobs`` threads.
    """
    if grid is None:
        grid = plan_tiles(vol.dims)
    if grid.dims != vol.dims:
        raise ValueError(f"tile grid planned for {grid.dims}, volume is {vol.dims}")
    pad = [(b, p - n - b) for b, p, n in zip(grid.pad_before, grid.padded_dims, vol.dims)]
    padded = np.pad(vol.data, pad, mode="constant")
    origin0 = vol.index_to_world(-np.asarray(grid.pad_before, dtype=np.float64))

    def run(start):
        window = tuple(slice(a, a + p) for a, p in zip(start, grid.patch_size))
        origin = origin0 + vol.direction @ (np.asarray(start) * np.asarray(vol.spacing))
        patch = ScalarVolume(padded[window], vol.spacing, tuple(origin), vol.direction)
        return window, _check_output(predictor(patch), grid.patch_size)

    total = np.zeros(grid.padded_dims, dtype=np.float64)
    count = np.zeros(grid.padded_dims, dtype=np.uint16)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, grid.windows))
    else:
        results = map(run, grid.windows)
    for window, pred in results:
        total[window] += pred
        count[window] += 1
    inner = tuple(slice(b, b + n) for b, n in zip(grid.pad_before, vol.dims))
    mean = total[inner] / count[inner]
    return vol.with_data(np.clip(mean, 0.0, 1.0), ProbabilityMap)


# --------------------------------------------------------------------------
# built-in predictors
# --------------------------------------------------------------------------


class ConstantPredictor:
    def __init__(self, value: float):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"constant probability must lie in [0, 1], got {value}")
        self.value = float(value)

    def __call__(self, patch: ScalarVolume) -> np.ndarray:
        return np.full(patch.dims, self.value, dtype=np.float32)


class FieldPredictor:
    """Evaluates ``func(x, y, z)`` (world mm, broadcast arrays) at every voxel."""

    def __init__(self, func: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]):
        self.func = func

    def __call__(self, patch: ScalarVolume) -> np.ndarray:
        idx = np.indices(patch.dims, dtype=np.float64).reshape(3, -1).T
        world = patch.index_to_world(idx)
        values = self.func(world[:, 0], world[:, 1], world[:, 2])
        return np.asarray(values, dtype=np.float64).reshape(patch.dims)


class SpherePredictor(FieldPredictor):
    """1 inside a world-space sphere (centre and radius in mm), 0 outside."""

    def __init__(self, center, radius: float):
        cx, cy, cz = (float(c) for c in center)
        r2 = float(radius) ** 2
        super().__init__(lambda x, y, z: ((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r2).astype(np.float64))


class VolumePredictor:
    """Serves patches out of a precomputed full-size probability map.

    Lets externally produced network outputs flow through the same tiling code.
    The map must share the input volume's spacing and orientation.
    """

    def __init__(self, prob: ProbabilityMap):
        self.prob = prob

    def __call__(self, patch: ScalarVolume) -> np.ndarray:
        start = np.rint(self.prob.world_to_index(np.asarray(patch.origin))).astype(int)
        out = np.zeros(patch.dims, dtype=np.float32)
        src, dst = [], []
        for a, n, full in zip(start, patch.dims, self.prob.dims):
            lo, hi = max(a, 0), min(a + n, full)
            if hi <= lo:
                return out
            src.append(slice(lo, hi))
            dst.append(slice(lo - a, hi - a))
        out[tuple(dst)] = self.prob.data[tuple(src)]
        return out


def parse_predictor(spec: str, case_name: str | None = None):
    """Build a predictor from ``constant:<p>``, ``sphere:<cx,cy,cz,r>`` or ``external:<dir>``.

    ``external`` looks up ``<dir>/<case_name>`` and serves patches from it.
    """
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return ConstantPredictor(float(arg))
    if kind == "sphere":
        parts = [float(v) for v in arg.split(",")]
        if len(parts) != 4:
            raise ValueError(f"sphere predictor needs cx,cy,cz,r; got {arg!r}")
        return SpherePredictor(parts[:3], parts[3])
    if kind == "external":
        if case_name is None:
            raise ValueError("external predictor needs the case file name")
        return VolumePredictor(load_probability(Path(arg) / case_name))
    raise ValueError(f"unknown predictor {spec!r}")
