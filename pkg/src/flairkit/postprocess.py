"""Probability map -> clean binary prediction, and the threshold sweep."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy import ndimage

from .components import LabeledComponents, connected_components
from .metrics import TN, TP, CaseEvaluation, evaluate_case
from .volume import BinaryMask, ProbabilityMap, check_same_geometry

if TYPE_CHECKING:
    from .config import Config

__all__ = [
    "apply_brain_mask",
    "binarize",
    "filter_components",
    "filter_small_components",
    "postprocess_prediction",
    "SweepCase",
    "SweepResult",
    "threshold_sweep",
    "sweep_score",
    "evaluate_thresholds",
]


def apply_brain_mask(prob: ProbabilityMap, brain: BinaryMask) -> ProbabilityMap:
    check_same_geometry(prob, brain)
    return prob.with_data(np.where(brain.data, prob.data, np.float32(0)))


def binarize(prob: ProbabilityMap, threshold: float) -> BinaryMask:
    """Voxels with probability strictly above ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return prob.with_data(prob.data > threshold, BinaryMask)


def filter_components(
    cc: LabeledComponents,
    spacing,
    min_ml: float = 0.05,
    min_consecutive_slices: int = 2,
    slice_axis: int = 2,
) -> LabeledComponents:
    """Drop components under ``min_ml`` or spanning too few slices; relabel the rest 1..m."""
    if cc.count == 0:
        return cc
    voxel_ml = float(np.prod(spacing)) / 1000.0
    extents = np.array(
        [sl[slice_axis].stop - sl[slice_axis].start for sl in ndimage.find_objects(cc.labels, cc.count)]
    )
    volumes = np.round(cc.sizes * voxel_ml, 9)
    keep = (volumes >= min_ml) & (extents >= min_consecutive_slices)
    if keep.all():
        return cc
    lut = np.zeros(cc.count + 1, dtype=np.int32)
    lut[1:][keep] = np.arange(1, int(keep.sum()) + 1, dtype=np.int32)
    return LabeledComponents(lut[cc.labels], int(keep.sum()), cc.sizes[keep], cc.connectivity)


def filter_small_components(
    mask: BinaryMask,
    min_ml: float = 0.05,
    min_consecutive_slices: int = 2,
    slice_axis: int = 2,
    connectivity: int = 26,
) -> BinaryMask:
    """Remove components smaller than ``min_ml`` or not seen on two consecutive slices.

    A connected component always occupies a contiguous run of slices, so
    "two consecutive slices" is the same as an extent of at least two along
    ``slice_axis``.
    """
    cc = connected_components(mask, connectivity)
    kept = filter_components(cc, mask.spacing, min_ml, min_consecutive_slices, slice_axis)
    return mask.with_data(kept.labels > 0)


def postprocess_prediction(
    prob: ProbabilityMap,
    threshold: float,
    brain: Optional[BinaryMask] = None,
    config: "Config | None" = None,
) -> BinaryMask:
    """Brain mask, binarise, then small-component filter."""
    config = _config(config)
    if brain is not None:
        prob = apply_brain_mask(prob, brain)
    return filter_small_components(
        binarize(prob, threshold),
        config.min_component_ml,
        config.min_consecutive_slices,
        config.slice_axis,
        config.connectivity,
    )


def _config(config):
    if config is None:
        from .config import Config

        return Config()
    return config


# --------------------------------------------------------------------------
# threshold sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SweepCase:
    prob: ProbabilityMap
    gt: BinaryMask
    brain: Optional[BinaryMask] = None
    tumor: Optional[BinaryMask] = None  # subtracted from the prediction when given


@dataclass(frozen=True)
class SweepResult:
    thresholds: tuple[float, ...]
    mean_scores: tuple[float, ...]
    best_index: int
    # evaluations[threshold index][case index]
    evaluations: tuple[tuple[CaseEvaluation, ...], ...]

    @property
    def best_threshold(self) -> float:
        return self.thresholds[self.best_index]

    @property
    def best_evaluations(self) -> tuple[CaseEvaluation, ...]:
        return self.evaluations[self.best_index]


def sweep_score(ev: CaseEvaluation) -> float:
    """Per-case score the sweep maximises: object dice for TP, 1 for TN, 0 otherwise."""
    outcome = ev.classification.outcome
    if outcome == TP:
        return ev.scores.dice
    return 1.0 if outcome == TN else 0.0


def _as_case(case) -> SweepCase:
    if isinstance(case, SweepCase):
        return case
    return SweepCase(*case)


def evaluate_thresholds(case: SweepCase, thresholds: Sequence[float], config: "Config") -> list[CaseEvaluation]:
    check_same_geometry(case.gt, case.prob)
    if case.tumor is not None:
        check_same_geometry(case.gt, case.tumor)
    prob = apply_brain_mask(case.prob, case.brain) if case.brain is not None else case.prob
    gt_cc = connected_components(case.gt, config.connectivity)
    out: list[CaseEvaluation] = []
    previous = None
    for t in thresholds:
        pred_cc = filter_components(
            connected_components(prob.data > t, config.connectivity),
            prob.spacing,
            config.min_component_ml,
            config.min_consecutive_slices,
            config.slice_axis,
        )
        pred_data = pred_cc.labels > 0
        if case.tumor is not None:
            pred_data &= ~case.tumor.data
            pred_cc = connected_components(pred_data, config.connectivity)
        # neighbouring thresholds often keep the same mask
        if previous is not None and np.array_equal(pred_data, previous):
            out.append(out[-1])
            continue
        previous = pred_data
        pred = case.gt.with_data(pred_data)
        out.append(
            evaluate_case(
                case.gt,
                pred,
                positive_threshold_ml=config.positive_threshold_ml,
                tp_dice_min=config.tp_dice_min,
                connectivity=config.connectivity,
                unmatched_pred_min_ml=config.unmatched_pred_min_ml,
                weighting=config.weighting,
                gt_components=gt_cc,
                pred_components=pred_cc,
            )
        )
    return out


def threshold_sweep(cases, thresholds: Sequence[float] | None = None, config: "Config | None" = None) -> SweepResult:
    """Run postprocessing + metrics at every threshold and pick the best.

    ``cases`` holds :class:`SweepCase` objects or ``(prob, gt[, brain[, tumor]])``
    tuples. The winner maximises the mean of :func:`sweep_score` over cases;
    ties go to the lower threshold.
    """
    config = _config(config)
    thresholds = tuple(config.thresholds if thresholds is None else thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])) or not thresholds:
        raise ValueError("thresholds must be non-empty and strictly increasing")
    cases = [_as_case(c) for c in cases]
    if not cases:
        raise ValueError("threshold sweep needs at least one case")
    per_case = [evaluate_thresholds(c, thresholds, config) for c in cases]
    evaluations = tuple(tuple(col) for col in zip(*per_case))
    means = tuple(math.fsum(sweep_score(e) for e in col) / len(col) for col in evaluations)
    best = 0
    for i, m in enumerate(means):
        if m > means[best]:
            best = i
    return SweepResult(thresholds, means, best, evaluations)
