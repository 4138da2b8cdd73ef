"""Seeded generators shared by the test modules."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from flairkit.phantom import Ellipsoid, make_phantom


def random_mask(rng: np.random.Generator, shape, kind: str | None = None) -> np.ndarray:
    """Blobby, speckled or sparse random mask; never empty."""
    kind = kind or rng.choice(["blob", "speckle", "sparse"])
    if kind == "blob":
        field = ndimage.gaussian_filter(rng.random(shape), sigma=rng.uniform(0.8, 2.0))
        mask = field > np.quantile(field, rng.uniform(0.6, 0.9))
    elif kind == "speckle":
        mask = rng.random(shape) < rng.uniform(0.05, 0.4)
    else:
        mask = np.zeros(shape, bool)
        for _ in range(rng.integers(1, 5)):
            mask[tuple(rng.integers(0, n) for n in shape)] = True
    if not mask.any():
        mask[tuple(n // 2 for n in shape)] = True
    return mask


def random_shape(rng: np.random.Generator, lo: int = 3, hi: int = 24) -> tuple[int, int, int]:
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=3))


def lesion_phantom(seed: int, dims=(32, 32, 24), spacing=(1.0, 1.0, 1.0), n_lesions: int | None = None):
    """Brain-like ellipsoid with one to three spherical lesions inside it."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4)) if n_lesions is None else n_lesions
    sp = np.asarray(spacing)
    extent = (np.asarray(dims) - 1) * sp
    spheres = [Ellipsoid(tuple(extent / 2), tuple(extent * 0.45), 0.5)]
    for _ in range(n):
        r = min(float(rng.uniform(2.5, 4.5)), max(1.5, float(extent.min()) / 2 - 3))
        c = tuple(float(rng.uniform(r + 2, max(r + 2, e - r - 2))) for e in extent)
        spheres.append(Ellipsoid.sphere(c, r, 1.0))
    _, head = make_phantom(spheres[:1], dims, spacing)
    vol, _ = make_phantom(spheres, dims, spacing, noise_sigma=0.05, seed=seed)
    lesions = make_phantom(spheres[1:], dims, spacing)[1] if n else head.with_data(np.zeros(dims, bool))
    return vol, lesions, head
