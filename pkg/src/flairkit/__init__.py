"""Preprocessing, inference plumbing and evaluation for FLAIR hyperintensity segmentation studies."""
from .config import Config
from .volume import (
    BinaryMask,
    ProbabilityMap,
    ScalarVolume,
    load_mask,
    load_probability,
    load_volume,
    mask_volume_ml,
    save_volume,
    voxel_volume_ml,
)

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ScalarVolume",
    "BinaryMask",
    "ProbabilityMap",
    "load_volume",
    "load_mask",
    "load_probability",
    "save_volume",
    "voxel_volume_ml",
    "mask_volume_ml",
]
