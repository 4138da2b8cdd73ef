"""Case registry, label derivation, exclusion, subgroup names and fold planning."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .volume import BinaryMask, check_same_geometry, round_ml

__all__ = [
    "SOURCE_GROUPS",
    "TUMOR_TYPES",
    "TIME_POINTS",
    "TARGETS",
    "CaseRecord",
    "FoldPlan",
    "derive_fh_label",
    "subtract_tumor",
    "apply_exclusion",
    "subgroup_name",
    "volume_bin",
    "stratified_split",
    "read_manifest",
    "write_manifest",
]

SOURCE_GROUPS = ("A", "B")
TUMOR_TYPES = ("Gli", "Met", "Men")
TIME_POINTS = ("pre", "early_post", "post1", "post3", "post6")
TARGETS = ("FH", "SNFH")


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    patient_id: str
    source_group: str
    tumor_type: str
    time_point: str
    target: str = "FH"
    gt_path: str = ""
    prob_path: str = ""
    tumor_mask_path: str = ""
    brain_mask_path: str = ""
    gt_ml: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.case_id or not self.patient_id:
            raise ValueError("case_id and patient_id must be non-empty")
        if self.source_group not in SOURCE_GROUPS:
            raise ValueError(f"{self.case_id}: unknown source group {self.source_group!r}")
        if self.tumor_type not in TUMOR_TYPES:
            raise ValueError(f"{self.case_id}: unknown tumor type {self.tumor_type!r}")
        if self.time_point not in TIME_POINTS:
            raise ValueError(f"{self.case_id}: unknown time point {self.time_point!r}")
        if self.target not in TARGETS:
            raise ValueError(f"{self.case_id}: unknown target {self.target!r}")
        if self.target == "SNFH" and self.source_group != "B":
            raise ValueError(f"{self.case_id}: SNFH labels only exist for group B")
        if self.tumor_type in ("Met", "Men") and self.time_point != "pre":
            raise ValueError(f"{self.case_id}: {self.tumor_type} cases are pre-operative only")
        if self.source_group == "A" and self.tumor_type != "Gli":
            raise ValueError(f"{self.case_id}: group A holds gliomas only")

    @property
    def is_pre(self) -> bool:
        return self.time_point == "pre"

    @property
    def time_tag(self) -> str:
        return "pre" if self.is_pre else "post"

    @property
    def test_set(self) -> str:
        return subgroup_name({self.source_group}, {self.time_point}, self.tumor_type)


# --------------------------------------------------------------------------
# labels
# --------------------------------------------------------------------------


def derive_fh_label(tumor_core: BinaryMask, snfh: BinaryMask) -> BinaryMask:
    """Whole FLAIR hyperintensity = tumor core ∪ surrounding hyperintensity."""
    check_same_geometry(tumor_core, snfh)
    return tumor_core.with_data(tumor_core.data | snfh.data)


def subtract_tumor(pred_fh: BinaryMask, tumor: BinaryMask) -> BinaryMask:
    check_same_geometry(pred_fh, tumor)
    return pred_fh.with_data(pred_fh.data & ~tumor.data)


# --------------------------------------------------------------------------
# exclusion and naming
# --------------------------------------------------------------------------


def apply_exclusion(records: Iterable[CaseRecord], max_ml: float = 0.1):
    """Split into ``(kept, excluded)``; cases with 0 < gt_ml <= max_ml are excluded.

    Empty ground truths are kept (they are the negative cases).
    """
    kept, excluded = [], []
    for rec in records:
        if rec.gt_ml is None:
            raise ValueError(f"{rec.case_id}: gt_ml not populated")
        ml = round_ml(rec.gt_ml)
        (excluded if 0.0 < ml <= max_ml else kept).append(rec)
    return kept, excluded


def subgroup_name(
    groups: Iterable[str] | str,
    time_points: Iterable[str] | str,
    tumor_type: Optional[str] = None,
    snfh_subtracted: bool = False,
) -> str:
    """Canonical subgroup name, e.g. ``A_B_pre_post``, ``Gli_A_post``, ``B_pre_post*``.

    Detailed post-operative time points all fold into the ``post`` tag.
    """
    groups = {groups} if isinstance(groups, str) else set(groups)
    time_points = {time_points} if isinstance(time_points, str) else set(time_points)
    if not groups or not time_points:
        raise ValueError("subgroup needs at least one group and one time point")
    tags = {"pre" if t == "pre" else "post" for t in time_points}
    parts = ([tumor_type] if tumor_type else []) + sorted(groups) + [t for t in ("pre", "post") if t in tags]
    return "_".join(parts) + ("*" if snfh_subtracted else "")


# --------------------------------------------------------------------------
# folds
# --------------------------------------------------------------------------


def volume_bin(ml: float, edges: Sequence[float] = (1.0, 10.0, 50.0)) -> int:
    """Index of the volume bin: ``<= e0`` is 0, ``(e0, e1]`` is 1, ..."""
    ml = round_ml(ml)
    return sum(1 for e in edges if ml > e)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    def rotation(self, test: int) -> dict:
        """Fold sets for the run whose test fold is ``test``; validation is the next fold."""
        val = (test + 1) % self.k
        return {"test": test, "val": val, "train": [f for f in range(self.k) if f not in (test, val)]}

    @property
    def rotations(self) -> list[dict]:
        return [self.rotation(i) for i in range(self.k)]

    def patients_in(self, folds: Iterable[int]) -> set[str]:
        folds = set(folds)
        return {p for p, f in self.assignment.items() if f in folds}

    def split(self, records: Iterable[CaseRecord], test: int) -> dict[str, list[CaseRecord]]:
        rot = self.rotation(test)
        out: dict[str, list[CaseRecord]] = {"train": [], "val": [], "test": []}
        train = set(rot["train"])
        for rec in records:
            fold = self.assignment[rec.patient_id]
            if fold == rot["test"]:
                out["test"].append(rec)
            elif fold == rot["val"]:
                out["val"].append(rec)
            elif fold in train:
                out["train"].append(rec)
        return out

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "seed": self.seed,
            "assignment": dict(sorted(self.assignment.items())),
            "rotations": self.rotations,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        raw = json.loads(text)
        return cls(int(raw["k"]), int(raw["seed"]), {str(p): int(f) for p, f in raw["assignment"].items()})


def stratified_split(
    records: Sequence[CaseRecord],
    k: int = 5,
    seed: int = 0,
    volume_bins: Sequence[float] = (1.0, 10.0, 50.0),
) -> FoldPlan:
    """Patient-wise folds balanced over source, tumor type and volume bin.

    A patient's stratum is (source, tumor type, bin of the largest gt_ml over
    their scans). Within a stratum patients are shuffled with ``seed`` and
    dealt round-robin; the dealing position carries over between strata so the
    folds also stay balanced overall.
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    by_patient: dict[str, list[CaseRecord]] = defaultdict(list)
    for rec in records:
        if rec.gt_ml is None:
            raise ValueError(f"{rec.case_id}: gt_ml not populated")
        by_patient[rec.patient_id].append(rec)
    strata: dict[tuple, list[str]] = defaultdict(list)
    for pid in sorted(by_patient):
        recs = sorted(by_patient[pid], key=lambda r: r.case_id)
        first = recs[0]
        key = (first.source_group, first.tumor_type, volume_bin(max(r.gt_ml for r in recs), volume_bins))
        strata[key].append(pid)
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    cursor = 0
    for key in sorted(strata):
        patients = strata[key]
        for i in rng.permutation(len(patients)):
            assignment[patients[i]] = cursor % k
            cursor += 1
    return FoldPlan(k, seed, assignment)


# --------------------------------------------------------------------------
# manifest CSV
# --------------------------------------------------------------------------

MANIFEST_COLUMNS = tuple(f.name for f in dataclasses.fields(CaseRecord))


def read_manifest(path_or_text) -> list[CaseRecord]:
    """Read a manifest CSV (path or CSV text). Relative paths resolve against the CSV's folder."""
    base = None
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        path = Path(path_or_text)
        base = path.parent
        text = path.read_text()
    else:
        text = path_or_text
    records = []
    for row in csv.DictReader(io.StringIO(text)):
        missing = {"case_id", "patient_id", "source_group", "tumor_type", "time_point"} - set(row)
        if missing:
            raise ValueError(f"manifest lacks columns {sorted(missing)}")
        fields = {c: (row.get(c) or "").strip() for c in MANIFEST_COLUMNS}
        fields["target"] = fields["target"] or "FH"
        fields["gt_ml"] = float(fields["gt_ml"]) if fields["gt_ml"] else None
        if base is not None:
            for col in ("gt_path", "prob_path", "tumor_mask_path", "brain_mask_path"):
                if fields[col] and not Path(fields[col]).is_absolute():
                    fields[col] = str(base / fields[col])
        records.append(CaseRecord(**fields))
    return records


def write_manifest(records: Iterable[CaseRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        row = dataclasses.asdict(rec)
        row["gt_ml"] = "" if rec.gt_ml is None else repr(float(rec.gt_ml))
        writer.writerow(row)
    return buf.getvalue()
