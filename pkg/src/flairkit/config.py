"""Protocol constants, overridable from a JSON file.

Every default here is the value used by the FLAIR-hyperintensity study
protocol; the ones the protocol leaves open carry our chosen default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig

DEFAULT_THRESHOLDS = (0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95)


@dataclass(frozen=True)
class Config:
    # cohort / classification
    positive_threshold_ml: float = 0.1
    exclusion_max_ml: float = 0.1
    tp_dice_min: float = 0.001
    volume_bins_ml: tuple[float, ...] = (1.0, 10.0, 50.0)
    k_folds: int = 5
    seed: int = 0

    # postprocessing
    min_component_ml: float = 0.05
    min_consecutive_slices: int = 2
    slice_axis: int = 2
    connectivity: int = 26
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS

    # object-wise scoring
    unmatched_pred_min_ml: float = 0.05
    weighting: str = "unweighted"

    # sliding window
    patch_size: tuple[int, int, int] = (160, 160, 160)
    overlap: float = 0.5

    # preprocessing
    target_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    head_threshold_fraction: float = 0.02
    crop_margin: int = 2
    clip_low_pct: float = 0.0
    clip_high_pct: float = 99.5
    normalization: str = "zscore"

    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self) -> None:
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if self.weighting not in ("unweighted", "volume"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.normalization not in ("zscore", "mean"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        ts = list(self.thresholds)
        if not ts or any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] < 0 or ts[-1] > 1:
            raise ValueError("thresholds must be strictly increasing within [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key == "augment":
                value = AugmentConfig.from_dict(value)
            elif isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_dict(json.loads(Path(path).read_text()))
