"""Case classification, object-wise segmentation scores and volume deltas.

Object-wise scoring pairs ground-truth and predicted connected components by
overlap: every predicted component is attached to each GT component it
touches. Per GT component ``g`` with attached predictions ``P``:

* dice      = 2|g ∩ P| / (|g| + |P|)
* recall    = |g ∩ P| / |g|
* precision = |g ∩ P| / |P|

GT components nothing touches score 0 for dice and recall. Predicted
components touching no GT and larger than ``unmatched_pred_min_ml`` add a 0
to the precision average. HD95 is measured between the union of matched GT
components and the union of their attached predictions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .components import LabeledComponents, connected_components, structure
from .stats import percentile
from .volume import BinaryMask, GeometryMismatchError, check_same_geometry, round_ml

__all__ = [
    "TP",
    "FP",
    "FN",
    "TN",
    "CaseClassification",
    "ObjectScores",
    "VolumeDelta",
    "Pairing",
    "CaseEvaluation",
    "NotTruePositiveError",
    "voxelwise_dice",
    "classify_case",
    "detection_rate",
    "pair_components",
    "object_scores",
    "surface_distances",
    "hd95",
    "volume_delta",
    "evaluate_case",
]

TP, FP, FN, TN = "TP", "FP", "FN", "TN"


class NotTruePositiveError(ValueError):
    pass


@dataclass(frozen=True)
class CaseClassification:
    outcome: str
    gt_ml: float
    pred_ml: float
    voxel_dice: float


@dataclass(frozen=True)
class ObjectScores:
    dice: float
    recall: float
    precision: float
    hd95_mm: float
    pairing: tuple[tuple[int, tuple[int, ...]], ...] = ()


@dataclass(frozen=True)
class VolumeDelta:
    direction: str  # "over", "under" or "exact"
    delta_ml: float


@dataclass(frozen=True, eq=False)
class Pairing:
    gt: LabeledComponents
    pred: LabeledComponents
    attached: dict[int, tuple[int, ...]]
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]
    # voxel counts of every overlapping (gt label, pred label) pair
    overlap: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def pairs(self) -> tuple[tuple[int, tuple[int, ...]], ...]:
        return tuple(sorted(self.attached.items()))


def _arrays(a, b) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(a, BinaryMask) and isinstance(b, BinaryMask):
        check_same_geometry(a, b)
        return a.data, b.data
    a, b = np.asarray(getattr(a, "data", a), bool), np.asarray(getattr(b, "data", b), bool)
    if a.shape != b.shape:
        raise GeometryMismatchError(f"dims differ: {a.shape} vs {b.shape}")
    return a, b


def voxelwise_dice(a: BinaryMask, b: BinaryMask) -> float:
    """2|A∩B| / (|A|+|B|), defined as 1 when both masks are empty."""
    da, db = _arrays(a, b)
    na, nb = int(np.count_nonzero(da)), int(np.count_nonzero(db))
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(da & db))
    return 2.0 * inter / (na + nb)


def classify_case(
    gt: BinaryMask,
    pred: BinaryMask,
    positive_threshold_ml: float = 0.1,
    tp_dice_min: float = 0.001,
) -> CaseClassification:
    check_same_geometry(gt, pred)
    gt_ml, pred_ml = gt.count * gt.voxel_volume_ml, pred.count * pred.voxel_volume_ml
    dice = voxelwise_dice(gt, pred)
    gt_pos = round_ml(gt_ml) > positive_threshold_ml
    pred_pos = round_ml(pred_ml) > positive_threshold_ml
    if gt_pos and pred_pos:
        outcome = TP if dice >= tp_dice_min else FN
    elif gt_pos:
        outcome = FN
    elif pred_pos:
        outcome = FP
    else:
        outcome = TN
    return CaseClassification(outcome, gt_ml, pred_ml, dice)


def detection_rate(classifications: Iterable) -> Optional[float]:
    """Percentage of positive cases detected; ``None`` without positive cases.

    Accepts :class:`CaseClassification` objects or bare outcome strings.
    """
    outcomes = [getattr(c, "outcome", c) for c in classifications]
    tp, fn = outcomes.count(TP), outcomes.count(FN)
    if tp + fn == 0:
        return None
    return 100.0 * tp / (tp + fn)


def pair_components(gt_cc: LabeledComponents, pred_cc: LabeledComponents) -> Pairing:
    if gt_cc.labels.shape != pred_cc.labels.shape:
        raise GeometryMismatchError(f"dims differ: {gt_cc.labels.shape} vs {pred_cc.labels.shape}")
    both = (gt_cc.labels > 0) & (pred_cc.labels > 0)
    key = gt_cc.labels[both].astype(np.int64) * (pred_cc.count + 1) + pred_cc.labels[both]
    keys, counts = np.unique(key, return_counts=True)
    overlap = {(int(k // (pred_cc.count + 1)), int(k % (pred_cc.count + 1))): int(c) for k, c in zip(keys, counts)}
    attached: dict[int, list[int]] = {}
    for g, p in overlap:
        attached.setdefault(g, []).append(p)
    touched = {p for _, p in overlap}
    return Pairing(
        gt=gt_cc,
        pred=pred_cc,
        attached={g: tuple(sorted(ps)) for g, ps in sorted(attached.items())},
        unmatched_gt=tuple(g for g in range(1, gt_cc.count + 1) if g not in attached),
        unmatched_pred=tuple(p for p in range(1, pred_cc.count + 1) if p not in touched),
        overlap=overlap,
    )


# --------------------------------------------------------------------------
# surface distances
# --------------------------------------------------------------------------


def _roi(union: np.ndarray) -> tuple[slice, ...]:
    idx = np.nonzero(union)
    return tuple(
        slice(max(int(ax.min()) - 1, 0), min(int(ax.max()) + 2, n)) for ax, n in zip(idx, union.shape)
    )


def _boundary(mask: np.ndarray) -> np.ndarray:
    # Outside the array counts as unset, so edge voxels are boundary voxels.
    eroded = ndimage.binary_erosion(mask, structure=structure(6), border_value=0)
    return mask & ~eroded


def surface_distances(a: np.ndarray, b: np.ndarray, spacing) -> tuple[np.ndarray, np.ndarray]:
    """Distances (mm) from each boundary voxel of ``a`` to the nearest of ``b``, and back."""
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    # Work inside the joint bounding box padded by one voxel; distances only
    # involve the two boundary sets, which lie wholly inside it.
    roi = _roi(a | b)
    a, b = a[roi], b[roi]
    ba, bb = _boundary(a), _boundary(b)
    sampling = tuple(float(s) for s in spacing)
    to_b = ndimage.distance_transform_edt(~bb, sampling=sampling)
    to_a = ndimage.distance_transform_edt(~ba, sampling=sampling)
    return to_b[ba], to_a[bb]


def hd95(a: BinaryMask, b: BinaryMask, spacing=None) -> float:
    """95th percentile of the pooled symmetric boundary-to-boundary distances (mm)."""
    da, db = _arrays(a, b)
    if spacing is None:
        spacing = a.spacing if isinstance(a, BinaryMask) else (1.0, 1.0, 1.0)
    if not da.any() or not db.any():
        raise ValueError("HD95 needs two non-empty masks")
    d_ab, d_ba = surface_distances(da, db, spacing)
    return percentile(np.concatenate([d_ab, d_ba]), 95.0)


# --------------------------------------------------------------------------
# object-wise scores
# --------------------------------------------------------------------------


def _weighted_mean(values: list[float], weights: list[float]) -> float:
    if not values:
        return 0.0
    total = math.fsum(weights)
    return math.fsum(v * w for v, w in zip(values, weights)) / total


def object_scores(
    gt: BinaryMask,
    pred: BinaryMask,
    pairing: Pairing | None = None,
    *,
    connectivity: int = 26,
    unmatched_pred_min_ml: float = 0.05,
    weighting: str = "unweighted",
    positive_threshold_ml: float = 0.1,
    tp_dice_min: float = 0.001,
    check_tp: bool = True,
) -> ObjectScores:
    """Object-wise dice/recall/precision/HD95 for a true-positive case.

    ``weighting="volume"`` weights each GT component by its voxel count (and
    each precision entry by its predicted voxel count) instead of equally.
    """
    if weighting not in ("unweighted", "volume"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if check_tp:
        outcome = classify_case(gt, pred, positive_threshold_ml, tp_dice_min).outcome
        if outcome != TP:
            raise NotTruePositiveError(f"object-wise scores need a TP case, got {outcome}")
    if pairing is None:
        pairing = pair_components(connected_components(gt, connectivity), connected_components(pred, connectivity))
    gsize, psize = pairing.gt.sizes, pairing.pred.sizes
    unweighted = weighting == "unweighted"

    dices, recalls, gw = [], [], []
    precisions, pw = [], []
    for g in range(1, pairing.gt.count + 1):
        size_g = int(gsize[g - 1])
        preds = pairing.attached.get(g, ())
        inter = sum(pairing.overlap[(g, p)] for p in preds)
        size_p = sum(int(psize[p - 1]) for p in preds)
        dices.append(2.0 * inter / (size_g + size_p))
        recalls.append(inter / size_g)
        gw.append(1.0 if unweighted else float(size_g))
        if preds:
            precisions.append(inter / size_p)
            pw.append(1.0 if unweighted else float(size_p))
    voxel_ml = pred.voxel_volume_ml
    for p in pairing.unmatched_pred:
        size_p = int(psize[p - 1])
        if round_ml(size_p * voxel_ml) > unmatched_pred_min_ml:
            precisions.append(0.0)
            pw.append(1.0 if unweighted else float(size_p))

    matched_gt = [g for g in pairing.attached]
    matched_pred = sorted({p for ps in pairing.attached.values() for p in ps})
    if matched_gt:
        gt_union = np.isin(pairing.gt.labels, matched_gt)
        pred_union = np.isin(pairing.pred.labels, matched_pred)
        dist = hd95(gt_union, pred_union, spacing=gt.spacing)
    else:
        dist = math.nan
    return ObjectScores(
        dice=_weighted_mean(dices, gw),
        recall=_weighted_mean(recalls, gw),
        precision=_weighted_mean(precisions, pw),
        hd95_mm=dist,
        pairing=pairing.pairs,
    )


def volume_delta(gt: BinaryMask, pred: BinaryMask) -> VolumeDelta:
    check_same_geometry(gt, pred)
    diff = pred.count - gt.count
    direction = "over" if diff > 0 else "under" if diff < 0 else "exact"
    return VolumeDelta(direction, abs(diff) * gt.voxel_volume_ml)


@dataclass(frozen=True)
class CaseEvaluation:
    classification: CaseClassification
    scores: Optional[ObjectScores]
    delta: Optional[VolumeDelta]


def evaluate_case(
    gt: BinaryMask,
    pred: BinaryMask,
    *,
    positive_threshold_ml: float = 0.1,
    tp_dice_min: float = 0.001,
    connectivity: int = 26,
    unmatched_pred_min_ml: float = 0.05,
    weighting: str = "unweighted",
    gt_components: LabeledComponents | None = None,
    pred_components: LabeledComponents | None = None,
) -> CaseEvaluation:
    """Classification, plus object scores and volume delta when the case is TP."""
    cls = classify_case(gt, pred, positive_threshold_ml, tp_dice_min)
    if cls.outcome != TP:
        return CaseEvaluation(cls, None, None)
    gt_cc = gt_components or connected_components(gt, connectivity)
    pred_cc = pred_components or connected_components(pred, connectivity)
    scores = object_scores(
        gt,
        pred,
        pair_components(gt_cc, pred_cc),
        unmatched_pred_min_ml=unmatched_pred_min_ml,
        weighting=weighting,
        check_tp=False,
    )
    return CaseEvaluation(cls, scores, volume_delta(gt, pred))
