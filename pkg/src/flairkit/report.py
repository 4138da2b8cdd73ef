"""Per-case metric rows, cohort aggregation and result-table emission."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .cohort import subgroup_name
from .metrics import FN, TP
from .stats import mean_std, median_iqr

__all__ = [
    "CaseMetrics",
    "AggregateRow",
    "CASE_COLUMNS",
    "TABLE_HEADERS",
    "write_case_csv",
    "read_case_csv",
    "aggregate",
    "emit_table",
    "emit_scatter_data",
    "format_mean_std",
    "format_median_iqr",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    group: str
    tumor_type: str
    time_point: str
    target: str
    outcome: str
    gt_ml: float
    pred_ml: float
    dice: Optional[float] = None
    recall: Optional[float] = None
    precision: Optional[float] = None
    hd95_mm: Optional[float] = None
    delta_ml: Optional[float] = None
    direction: Optional[str] = None
    threshold: Optional[float] = None
    fold: Optional[int] = None

    @property
    def test_set(self) -> str:
        return subgroup_name({self.group}, {self.time_point}, self.tumor_type)

    @property
    def is_positive(self) -> bool:
        return self.outcome in (TP, FN)


CASE_COLUMNS = tuple(f.name for f in dataclasses.fields(CaseMetrics))
_FLOATS = {"gt_ml", "pred_ml", "dice", "recall", "precision", "hd95_mm", "delta_ml", "threshold"}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_case_csv(metrics: Iterable[CaseMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CASE_COLUMNS)
    for m in metrics:
        writer.writerow([_cell(getattr(m, c)) for c in CASE_COLUMNS])
    return buf.getvalue()


def read_case_csv(text: str) -> list[CaseMetrics]:
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        fields = {}
        for col in CASE_COLUMNS:
            value = (raw.get(col) or "").strip()
            if col in _FLOATS:
                fields[col] = float(value) if value else None
            elif col == "fold":
                fields[col] = int(value) if value else None
            elif col == "direction":
                fields[col] = value or None
            else:
                fields[col] = value
        rows.append(CaseMetrics(**fields))
    return rows


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateRow:
    keys: tuple[tuple[str, str], ...]
    n_cases: int
    n_positive: int
    n_tp: int
    detection_rate: Optional[float]
    dice: Optional[tuple[float, float]]
    recall: Optional[tuple[float, float]]
    precision: Optional[tuple[float, float]]
    hd95_mm: Optional[tuple[float, float]]
    over: Optional[tuple[float, float, float]]  # median, q1, q3 in mL
    over_count: int
    under: Optional[tuple[float, float, float]]
    under_count: int

    def key(self, name: str) -> str:
        return dict(self.keys)[name]


def _key_value(m: CaseMetrics, name: str) -> str:
    if name == "test_set":
        return m.test_set
    if name == "time_tag":
        return "pre" if m.time_point == "pre" else "post"
    return str(getattr(m, name))


def aggregate(case_metrics: Sequence[CaseMetrics], group_by: Sequence[str] = ("test_set", "target")) -> list[AggregateRow]:
    """One row per group: detection rate over positives, object scores over TP cases.

    Groups come out sorted by key, and cases are ordered by id inside each
    group, so the result does not depend on input order.
    """
    groups: dict[tuple[str, ...], list[CaseMetrics]] = {}
    for m in case_metrics:
        groups.setdefault(tuple(_key_value(m, k) for k in group_by), []).append(m)
    rows = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda m: (m.case_id, m.target, m.threshold or 0.0))
        tps = [m for m in members if m.outcome == TP]
        positives = [m for m in members if m.is_positive]
        rate = 100.0 * len(tps) / len(positives) if positives else None

        def stat(field_name):
            vals = [getattr(m, field_name) for m in tps if getattr(m, field_name) is not None]
            return mean_std(vals) if vals else None

        over = [m.delta_ml for m in tps if m.direction == "over"]
        under = [m.delta_ml for m in tps if m.direction == "under"]
        rows.append(
            AggregateRow(
                keys=tuple(zip(group_by, key)),
                n_cases=len(members),
                n_positive=len(positives),
                n_tp=len(tps),
                detection_rate=rate,
                dice=stat("dice"),
                recall=stat("recall"),
                precision=stat("precision"),
                hd95_mm=stat("hd95_mm"),
                over=median_iqr(over) if over else None,
                over_count=len(over),
                under=median_iqr(under) if under else None,
                under_count=len(under),
            )
        )
    return rows


# --------------------------------------------------------------------------
# emission
# --------------------------------------------------------------------------

_KEY_LABELS = {
    "test_set": "Test set",
    "target": "Target",
    "time_point": "Time point",
    "time_tag": "Time point",
    "tumor_type": "Tumor type",
    "group": "Group",
    "fold": "Fold",
}

TABLE_HEADERS = (
    "Detection rate",
    "Dice",
    "Recall",
    "Precision",
    "HD95",
    "Over Δ (mL)",
    "Over # Samples",
    "Under Δ (mL)",
    "Under # Samples",
)

_FLAT_COLUMNS = (
    "n_cases",
    "detection_rate",
    "dice_mean",
    "dice_std",
    "recall_mean",
    "recall_std",
    "precision_mean",
    "precision_std",
    "hd95_mean",
    "hd95_std",
    "over_median",
    "over_q1",
    "over_q3",
    "over_count",
    "under_median",
    "under_q1",
    "under_q3",
    "under_count",
)


def format_mean_std(pair: Optional[tuple[float, float]], scale: float = 1.0) -> str:
    if pair is None:
        return "-"
    return f"{pair[0] * scale:05.2f}±{pair[1] * scale:05.2f}"


def format_median_iqr(triple: Optional[tuple[float, float, float]]) -> str:
    if triple is None:
        return "-"
    med, q1, q3 = triple
    return f"{med:.2f} [{q1:.2f}-{q3:.2f}]"


def _two(value: Optional[float]) -> Optional[float]:
    return None if value is None else float(f"{value:.2f}")


def _flat(row: AggregateRow) -> dict:
    """Numeric fields at two-decimal precision; overlap scores in percent."""
    out: dict = dict(row.keys)
    out["n_cases"] = row.n_cases
    out["detection_rate"] = _two(row.detection_rate)
    for name, scale in (("dice", 100.0), ("recall", 100.0), ("precision", 100.0), ("hd95", 1.0)):
        pair = getattr(row, "hd95_mm" if name == "hd95" else name)
        out[f"{name}_mean"] = None if pair is None else _two(pair[0] * scale)
        out[f"{name}_std"] = None if pair is None else _two(pair[1] * scale)
    for name in ("over", "under"):
        triple = getattr(row, name)
        for i, part in enumerate(("median", "q1", "q3")):
            out[f"{name}_{part}"] = None if triple is None else _two(triple[i])
        out[f"{name}_count"] = getattr(row, f"{name}_count")
    return out


def _markdown(rows: Sequence[AggregateRow], key_names: Sequence[str]) -> str:
    header = [_KEY_LABELS.get(k, k) for k in key_names] + list(TABLE_HEADERS)
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    for row in rows:
        cells = [row.key(k) for k in key_names]
        cells.append("-" if row.detection_rate is None else f"{row.detection_rate:.2f}")
        cells += [format_mean_std(getattr(row, n), 100.0) for n in ("dice", "recall", "precision")]
        cells.append(format_mean_std(row.hd95_mm))
        cells += [format_median_iqr(row.over), str(row.over_count)]
        cells += [format_median_iqr(row.under), str(row.under_count)]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_table(rows: Sequence[AggregateRow], fmt: str = "markdown", key_names: Sequence[str] | None = None) -> str:
    """Render aggregate rows as ``markdown``, ``csv`` or ``json``.

    Dice, recall and precision are shown in percent, as ``mean±std`` with two
    decimals; volume deltas as ``median [q1-q3]`` in mL.
    """
    if fmt not in ("markdown", "csv", "json"):
        raise ValueError(f"unknown table format {fmt!r}")
    if key_names is None:
        key_names = [k for k, _ in rows[0].keys] if rows else ["test_set", "target"]
    if not rows:
        log.warning("no rows to tabulate; emitting header only")
    if fmt == "markdown":
        return _markdown(rows, key_names)
    flat = [_flat(r) for r in rows]
    columns = list(key_names) + list(_FLAT_COLUMNS)
    if fmt == "json":
        return json.dumps(flat, indent=2, ensure_ascii=False) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for item in flat:
        writer.writerow(["" if item[c] is None else (f"{item[c]:.2f}" if isinstance(item[c], float) else item[c]) for c in columns])
    return buf.getvalue()


def emit_scatter_data(case_metrics: Iterable[CaseMetrics]) -> str:
    """CSV of (group, gt_ml, dice, outcome) for every case; non-TP cases get dice 0."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "gt_ml", "dice", "outcome"])
    for m in case_metrics:
        dice = m.dice if m.outcome == TP and m.dice is not None else 0.0
        writer.writerow([m.test_set, repr(float(m.gt_ml)), repr(float(dice)), m.outcome])
    return buf.getvalue()
