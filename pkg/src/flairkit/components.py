"""3D connected-component labelling (6- or 26-connectivity)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import BinaryMask

__all__ = ["LabeledComponents", "connected_components", "structure"]


def structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


@dataclass(frozen=True, eq=False)
class LabeledComponents:
    """Labels 1..count; ``sizes[i]`` is the voxel count of label ``i + 1``."""

    labels: np.ndarray
    count: int
    sizes: np.ndarray
    connectivity: int

    def component(self, label: int) -> np.ndarray:
        return self.labels == label


def connected_components(mask: BinaryMask | np.ndarray, connectivity: int = 26) -> LabeledComponents:
    data = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(data, structure=structure(connectivity))
    labels = labels.astype(np.int32, copy=False)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    return LabeledComponents(labels, int(count), sizes, connectivity)
