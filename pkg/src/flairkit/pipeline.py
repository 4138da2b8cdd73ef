"""End-to-end cohort evaluation: exclusion, per-fold threshold sweep, metrics, tables."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cohort import CaseRecord, FoldPlan, apply_exclusion
from .config import Config
from .metrics import CaseEvaluation
from .postprocess import SweepCase, apply_brain_mask, evaluate_thresholds, sweep_score
from .preprocess import CropBox, crop
from .report import (
    AggregateRow,
    CaseMetrics,
    aggregate,
    emit_scatter_data,
    emit_table,
    write_case_csv,
)
from .volume import check_same_geometry, load_mask, load_probability, mask_volume_ml

__all__ = ["EvaluationResult", "run_evaluation", "load_sweep_case", "crop_to_roi"]

log = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    cases: list[CaseMetrics]
    rows: list[AggregateRow]
    best_thresholds: dict[int, float]
    failures: list[tuple[str, str]] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)
    config: Config = field(default_factory=Config)

    @property
    def ok(self) -> bool:
        return not self.failures

    def case_csv(self) -> str:
        return write_case_csv(self.cases)

    def table(self, fmt: str = "markdown") -> str:
        return emit_table(self.rows, fmt)

    def metadata(self) -> dict:
        return {
            "best_thresholds": {str(k): v for k, v in sorted(self.best_thresholds.items())},
            "n_cases": len(self.cases),
            "excluded": sorted(self.excluded),
            "failures": [{"case_id": c, "error": e} for c, e in sorted(self.failures)],
            "config": self.config.to_dict(),
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "cases.csv").write_text(self.case_csv())
        (out / "scatter.csv").write_text(emit_scatter_data(self.cases))
        for fmt, name in (("markdown", "table.md"), ("csv", "table.csv"), ("json", "table.json")):
            (out / name).write_text(self.table(fmt))
        (out / "metadata.json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")


def crop_to_roi(case: SweepCase, min_threshold: float) -> SweepCase:
    """Restrict a case to the box holding every voxel any threshold can touch.

    The box covers the ground truth and every voxel above the lowest
    threshold, padded by one voxel so component connectivity and surface
    extraction see the same neighbourhoods as on the full grid.
    """
    prob = apply_brain_mask(case.prob, case.brain) if case.brain is not None else case.prob
    union = case.gt.data | (prob.data > min_threshold)
    if union.any():
        idx = np.nonzero(union)
        start = tuple(max(int(a.min()) - 1, 0) for a in idx)
        stop = tuple(min(int(a.max()) + 2, n) for a, n in zip(idx, union.shape))
    else:
        start, stop = (0, 0, 0), (1, 1, 1)
    box = CropBox(start, stop)  # type: ignore[arg-type]
    return SweepCase(
        prob=crop(prob, box),
        gt=crop(case.gt, box),
        brain=None,
        tumor=crop(case.tumor, box) if case.tumor is not None else None,
    )


def load_sweep_case(rec: CaseRecord) -> SweepCase:
    if not rec.gt_path or not rec.prob_path:
        raise ValueError("manifest row lacks gt_path or prob_path")
    gt = load_mask(rec.gt_path)
    prob = load_probability(rec.prob_path)
    check_same_geometry(gt, prob)
    brain = load_mask(rec.brain_mask_path) if rec.brain_mask_path else None
    if brain is not None:
        check_same_geometry(gt, brain)
    tumor = None
    if rec.target == "SNFH" and rec.tumor_mask_path:
        tumor = load_mask(rec.tumor_mask_path)
        check_same_geometry(gt, tumor)
    return SweepCase(prob, gt, brain, tumor)


def _to_metrics(rec: CaseRecord, ev: CaseEvaluation, threshold: float, fold: int) -> CaseMetrics:
    cls, scores, delta = ev.classification, ev.scores, ev.delta
    return CaseMetrics(
        case_id=rec.case_id,
        group=rec.source_group,
        tumor_type=rec.tumor_type,
        time_point=rec.time_point,
        target=rec.target,
        outcome=cls.outcome,
        gt_ml=cls.gt_ml,
        pred_ml=cls.pred_ml,
        dice=scores.dice if scores else None,
        recall=scores.recall if scores else None,
        precision=scores.precision if scores else None,
        hd95_mm=scores.hd95_mm if scores else None,
        delta_ml=delta.delta_ml if delta else None,
        direction=delta.direction if delta else None,
        threshold=threshold,
        fold=fold,
    )


def run_evaluation(
    records: Sequence[CaseRecord],
    folds: FoldPlan,
    config: Optional[Config] = None,
    jobs: int = 1,
    group_by: Sequence[str] = ("test_set", "target"),
) -> EvaluationResult:
    """Evaluate every test fold at its own best threshold.

    Unreadable or inconsistent cases are recorded in ``failures`` and skipped;
    the rest of the cohort is still evaluated.
    """
    config = config or Config()
    thresholds = tuple(config.thresholds)
    failures: list[tuple[str, str]] = []

    # gt_ml may be left blank in the manifest; fill it from the label file.
    filled = []
    for rec in sorted(records, key=lambda r: r.case_id):
        if rec.gt_ml is None:
            try:
                rec = replace(rec, gt_ml=mask_volume_ml(load_mask(rec.gt_path)))
            except Exception as exc:  # per-case failure, keep going
                failures.append((rec.case_id, f"{type(exc).__name__}: {exc}"))
                continue
        filled.append(rec)
    kept, excluded = apply_exclusion(filled, config.exclusion_max_ml)

    by_fold: dict[int, list[CaseRecord]] = {}
    for rec in kept:
        fold = folds.assignment.get(rec.patient_id)
        if fold is None:
            failures.append((rec.case_id, f"patient {rec.patient_id} missing from fold plan"))
            continue
        by_fold.setdefault(fold, []).append(rec)

    def evaluate(rec: CaseRecord):
        try:
            case = crop_to_roi(load_sweep_case(rec), thresholds[0])
            return rec, evaluate_thresholds(case, thresholds, config), None
        except Exception as exc:  # per-case failure, keep going
            return rec, None, f"{type(exc).__name__}: {exc}"

    metrics: list[CaseMetrics] = []
    best_thresholds: dict[int, float] = {}
    for fold in sorted(by_fold):
        recs = by_fold[fold]
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(evaluate, recs))
        else:
            results = [evaluate(r) for r in recs]
        done = []
        for rec, evs, err in results:
            if err is not None:
                log.warning("case %s failed: %s", rec.case_id, err)
                failures.append((rec.case_id, err))
            else:
                done.append((rec, evs))
        if not done:
            continue
        means = [math.fsum(sweep_score(evs[i]) for _, evs in done) / len(done) for i in range(len(thresholds))]
        best = 0
        for i, m in enumerate(means):
            if m > means[best]:
                best = i
        best_thresholds[fold] = thresholds[best]
        metrics.extend(_to_metrics(rec, evs[best], thresholds[best], fold) for rec, evs in done)

    metrics.sort(key=lambda m: m.case_id)
    rows = aggregate(metrics, group_by) if metrics else []
    return EvaluationResult(
        cases=metrics,
        rows=rows,
        best_thresholds=best_thresholds,
        failures=sorted(failures),
        excluded=[r.case_id for r in excluded],
        config=config,
    )
