"""Synthetic phantoms, scripted prediction perturbations and brute-force oracles.

The ``oracle_*`` functions are deliberately naive: Python sets, explicit
neighbour loops, all-pairs distances and a written-out percentile. They share
no code with :mod:`flairkit.metrics`, :mod:`flairkit.components` or
:mod:`flairkit.stats`, so agreement between the two is meaningful. They refuse
masks larger than 32 voxels along any axis.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .volume import BinaryMask, ProbabilityMap, ScalarVolume

__all__ = [
    "Ellipsoid",
    "OracleSizeError",
    "ORACLE_MAX_AXIS",
    "make_phantom",
    "parse_phantom_spec",
    "perturb_prediction",
    "oracle_dice",
    "oracle_boundary",
    "oracle_hd95",
    "oracle_components",
    "oracle_filter",
    "oracle_case",
    "oracle_percentile",
]

ORACLE_MAX_AXIS = 32


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]  # mm
    radii: tuple[float, float, float]  # mm
    intensity: float = 1.0

    @classmethod
    def sphere(cls, center, radius: float, intensity: float = 1.0) -> "Ellipsoid":
        return cls(tuple(center), (radius, radius, radius), intensity)


def make_phantom(
    ellipsoids: Sequence[Ellipsoid],
    dims,
    spacing=(1.0, 1.0, 1.0),
    noise_sigma: float = 0.0,
    seed: int = 0,
    origin=(0.0, 0.0, 0.0),
):
    """Paint ellipsoids onto a zero background and add seeded Gaussian noise.

    Later ellipsoids overwrite earlier ones where they overlap. Returns
    ``(volume, mask)`` where the mask is the union of all ellipsoids.
    """
    dims = tuple(int(d) for d in dims)
    spacing = np.asarray(spacing, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    upper = origin + (np.asarray(dims) - 1) * spacing
    axes = [origin[a] + np.arange(dims[a]) * spacing[a] for a in range(3)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    image = np.zeros(dims, dtype=np.float64)
    mask = np.zeros(dims, dtype=bool)
    for e in ellipsoids:
        c, r = np.asarray(e.center, float), np.asarray(e.radii, float)
        if np.any(c < origin) or np.any(c > upper) or np.any(r <= 0):
            raise ValueError(f"ellipsoid {e} lies outside the volume or has non-positive radii")
        inside = ((x - c[0]) / r[0]) ** 2 + ((y - c[1]) / r[1]) ** 2 + ((z - c[2]) / r[2]) ** 2 <= 1.0
        image[inside] = e.intensity
        mask |= inside
    if noise_sigma > 0:
        image += np.random.default_rng(seed).normal(0.0, noise_sigma, size=dims)
    spacing_t = tuple(float(s) for s in spacing)
    origin_t = tuple(float(o) for o in origin)
    return ScalarVolume(image, spacing_t, origin_t), BinaryMask(mask, spacing_t, origin_t)


def parse_phantom_spec(text: str):
    """Build a phantom from JSON: ``{"dims", "spacing", "noise_sigma", "seed", "ellipsoids": [...]}``."""
    raw = json.loads(text)
    ellipsoids = [
        Ellipsoid(tuple(e["center"]), tuple(e.get("radii") or [e["radius"]] * 3), float(e.get("intensity", 1.0)))
        for e in raw.get("ellipsoids", [])
    ]
    return make_phantom(
        ellipsoids,
        raw["dims"],
        raw.get("spacing", (1.0, 1.0, 1.0)),
        float(raw.get("noise_sigma", 0.0)),
        int(raw.get("seed", 0)),
        raw.get("origin", (0.0, 0.0, 0.0)),
    )


_CROSS = ndimage.generate_binary_structure(3, 1)


def _shift(data: np.ndarray, offset) -> np.ndarray:
    out = np.zeros_like(data)
    src, dst = [], []
    for d, n in zip(offset, data.shape):
        d = int(d)
        if abs(d) >= n:
            return out
        src.append(slice(max(0, -d), n - max(0, d)))
        dst.append(slice(max(0, d), n - max(0, -d)))
    out[tuple(dst)] = data[tuple(src)]
    return out


def perturb_prediction(gt: BinaryMask, mode: str, seed: int = 0) -> ProbabilityMap:
    """A 0/1 probability map derived from ``gt`` by a scripted perturbation.

    Modes: ``identity``, ``empty``, ``dilate:k``, ``erode:k`` (6-neighbour
    steps), ``shift:dx,dy,dz`` (voxels, zero fill), ``drop:i`` (remove the
    i-th 26-connected component, 0-based in label order),
    ``blob:cx,cy,cz,r`` (add a sphere, mm) and ``noise:p`` (flip each voxel
    with probability p).
    """
    kind, _, arg = mode.partition(":")
    data = gt.data.copy()
    if kind == "identity":
        pass
    elif kind == "empty":
        data[:] = False
    elif kind in ("dilate", "erode"):
        k = int(arg or 1)
        if k > 0:
            op = ndimage.binary_dilation if kind == "dilate" else ndimage.binary_erosion
            data = op(data, structure=_CROSS, iterations=k)
    elif kind == "shift":
        data = _shift(data, [int(v) for v in arg.split(",")])
    elif kind == "drop":
        labels, count = ndimage.label(data, structure=np.ones((3, 3, 3), bool))
        i = int(arg)
        if not 0 <= i < count:
            raise ValueError(f"cannot drop component {i}: mask has {count}")
        data = data & (labels != i + 1)
    elif kind == "blob":
        cx, cy, cz, r = (float(v) for v in arg.split(","))
        idx = np.indices(gt.dims).reshape(3, -1).T
        world = gt.index_to_world(idx)
        inside = ((world - np.array([cx, cy, cz])) ** 2).sum(axis=1) <= r * r
        data = data | inside.reshape(gt.dims)
    elif kind == "noise":
        flips = np.random.default_rng(seed).random(gt.dims) < float(arg)
        data = data ^ flips
    else:
        raise ValueError(f"unknown perturbation {mode!r}")
    return gt.with_data(data.astype(np.float32), ProbabilityMap)


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------


class OracleSizeError(ValueError):
    pass


def _voxels(mask) -> tuple[set, tuple[int, int, int]]:
    arr = np.asarray(getattr(mask, "data", mask))
    if arr.ndim != 3 or max(arr.shape) > ORACLE_MAX_AXIS:
        raise OracleSizeError(f"oracles accept at most {ORACLE_MAX_AXIS} voxels per axis, got {arr.shape}")
    return {tuple(int(v) for v in p) for p in np.argwhere(arr != 0)}, arr.shape


def oracle_dice(a, b) -> float:
    sa, shape_a = _voxels(a)
    sb, shape_b = _voxels(b)
    if shape_a != shape_b:
        raise ValueError("shape mismatch")
    if not sa and not sb:
        return 1.0
    return 2.0 * len(sa & sb) / (len(sa) + len(sb))


_FACE = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
_ALL26 = tuple(
    (i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)
)


def oracle_boundary(mask) -> list[tuple[int, int, int]]:
    """Set voxels with a face neighbour that is unset or outside the grid."""
    voxels, shape = _voxels(mask)
    out = []
    for p in sorted(voxels):
        for d in _FACE:
            q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
            inside = all(0 <= q[i] < shape[i] for i in range(3))
            if not inside or q not in voxels:
                out.append(p)
                break
    return out


def oracle_percentile(values: Sequence[float], q: float) -> float:
    xs = sorted(values)
    n = len(xs)
    pos = q / 100.0 * (n + 1)
    if pos < 1.0:
        pos = 1.0
    if pos > n:
        pos = float(n)
    lo = int(math.floor(pos))
    frac = pos - lo
    if frac == 0.0:
        return xs[lo - 1]
    return xs[lo - 1] + frac * (xs[lo] - xs[lo - 1])


def _directed(src: np.ndarray, dst: np.ndarray, spacing: np.ndarray) -> list[float]:
    out = []
    for start in range(0, len(src), 256):
        chunk = src[start : start + 256]
        diff = (chunk[:, None, :] - dst[None, :, :]) * spacing
        out.extend(np.sqrt((diff**2).sum(axis=2)).min(axis=1).tolist())
    return out


def oracle_hd95(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    ba = np.array(oracle_boundary(a), dtype=np.float64)
    bb = np.array(oracle_boundary(b), dtype=np.float64)
    if len(ba) == 0 or len(bb) == 0:
        raise ValueError("HD95 needs two non-empty masks")
    sp = np.asarray(spacing, dtype=np.float64)
    return oracle_percentile(_directed(ba, bb, sp) + _directed(bb, ba, sp), 95.0)


def oracle_components(mask, connectivity: int = 26) -> list[frozenset]:
    """Connected components as frozensets of voxel coordinates, by flood fill."""
    if connectivity not in (6, 26):
        raise ValueError("connectivity must be 6 or 26")
    steps = _FACE if connectivity == 6 else _ALL26
    remaining, _ = _voxels(mask)
    comps = []
    while remaining:
        seed = min(remaining)
        remaining.discard(seed)
        comp = {seed}
        todo = deque([seed])
        while todo:
            p = todo.popleft()
            for d in steps:
                q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
                if q in remaining:
                    remaining.discard(q)
                    comp.add(q)
                    todo.append(q)
        comps.append(frozenset(comp))
    return comps


def _to_mask(voxels, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for p in voxels:
        out[p] = True
    return out


def oracle_filter(mask, voxel_ml: float, min_ml=0.05, min_slices=2, slice_axis=2, connectivity=26) -> np.ndarray:
    """Keep components with volume >= min_ml covering >= min_slices consecutive slices."""
    _, shape = _voxels(mask)
    kept = []
    for comp in oracle_components(mask, connectivity):
        slices = sorted({p[slice_axis] for p in comp})
        run = best = 1
        for a, b in zip(slices, slices[1:]):
            run = run + 1 if b == a + 1 else 1
            best = max(best, run)
        if round(len(comp) * voxel_ml, 9) >= min_ml and best >= min_slices:
            kept.extend(comp)
    return _to_mask(kept, shape)


def oracle_case(
    gt,
    pred,
    spacing=(1.0, 1.0, 1.0),
    positive_ml: float = 0.1,
    tp_dice_min: float = 0.001,
    connectivity: int = 26,
    unmatched_pred_min_ml: float = 0.05,
) -> dict:
    """Classification, object scores and volume delta computed from first principles."""
    voxel_ml = float(spacing[0]) * float(spacing[1]) * float(spacing[2]) / 1000.0
    sg, _ = _voxels(gt)
    sp, _ = _voxels(pred)
    gt_ml, pred_ml = len(sg) * voxel_ml, len(sp) * voxel_ml
    dice = oracle_dice(gt, pred)
    gpos, ppos = round(gt_ml, 9) > positive_ml, round(pred_ml, 9) > positive_ml
    if gpos and ppos:
        outcome = "TP" if dice >= tp_dice_min else "FN"
    else:
        outcome = "FN" if gpos else "FP" if ppos else "TN"
    result = {"outcome": outcome, "gt_ml": gt_ml, "pred_ml": pred_ml, "voxel_dice": dice}
    if outcome != "TP":
        return result

    gcomps = oracle_components(gt, connectivity)
    pcomps = oracle_components(pred, connectivity)
    dices, recalls, precisions = [], [], []
    matched_g, matched_p = set(), set()
    touched = set()
    for g in gcomps:
        attached = [i for i, p in enumerate(pcomps) if g & p]
        touched.update(attached)
        union = set().union(*(pcomps[i] for i in attached)) if attached else set()
        inter = len(g & union)
        dices.append(2.0 * inter / (len(g) + len(union)))
        recalls.append(inter / len(g))
        if attached:
            precisions.append(inter / len(union))
            matched_g |= g
            matched_p |= union
    for i, p in enumerate(pcomps):
        if i not in touched and round(len(p) * voxel_ml, 9) > unmatched_pred_min_ml:
            precisions.append(0.0)
    shape = np.asarray(getattr(gt, "data", gt)).shape
    result.update(
        dice=math.fsum(dices) / len(dices),
        recall=math.fsum(recalls) / len(recalls),
        precision=math.fsum(precisions) / len(precisions),
        hd95_mm=oracle_hd95(_to_mask(matched_g, shape), _to_mask(matched_p, shape), spacing),
    )
    diff = len(sp) - len(sg)
    result["direction"] = "over" if diff > 0 else "under" if diff < 0 else "exact"
    result["delta_ml"] = abs(diff) * voxel_ml
    return result

