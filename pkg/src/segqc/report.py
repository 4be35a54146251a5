"""GateReport serialization as versioned JSON, a fixed-row text table and CSV."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .gate import GateReport

REPORT_FORMAT = "segqc-gate-report"
REPORT_VERSION = 1
UNDEFINED = "undefined"

# row labels of the summary table and the report attribute each one shows
TABLE_ROWS = (
    ("Correlation coefficient", "pearson_r"),
    ("Dice after filtering", "mean_after"),
    ("Precision", "precision"),
    ("Recall", "recall"),
    ("N failed segmentations identified", "n_flagged"),
    ("MAE", "mae"),
)


def _mark_undefined(obj, key=None):
    if key == "flagged_ids":
        return obj
    if obj is None:
        return UNDEFINED
    if isinstance(obj, dict):
        return {k: _mark_undefined(v, k) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_mark_undefined(v) for v in obj]
    return obj


def _unmark_undefined(obj, key=None):
    if key == "flagged_ids":
        return obj
    if obj == UNDEFINED:
        return None
    if isinstance(obj, dict):
        return {k: _unmark_undefined(v, k) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unmark_undefined(v) for v in obj]
    return obj


def report_to_json(report: GateReport) -> str:
    doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION, "report": _mark_undefined(report.to_dict())}
    return json.dumps(doc, indent=2) + "\n"


def report_from_json(text: str) -> GateReport:
    doc = json.loads(text)
    if doc.get("format") != REPORT_FORMAT:
        raise ValueError(f"not a {REPORT_FORMAT} document")
    if doc.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {doc.get('version')}")
    return GateReport.from_dict(_unmark_undefined(doc["report"]))


def _cells(report: GateReport, attr: str, fmt) -> list[str]:
    if attr == "mae" and report.score != "predicted_dice":
        return ["-"] * 3
    values = [getattr(report, attr)]
    if report.fold_summary:
        summary = report.fold_summary[attr]
        values += [summary["mean"], summary["median"]]
    cells = [UNDEFINED if v is None else fmt(v) for v in values]
    return cells + ["-"] * (3 - len(cells))


def _human(v) -> str:
    return str(v) if isinstance(v, int) else f"{v:.4f}"


def report_to_text(report: GateReport) -> str:
    op = "<" if report.flag_when == "below" else ">"
    lines = [
        f"# QC gate: flag {report.score} {op} {report.threshold!r}",
        f"# failure label: true Dice < {report.dice_fail_threshold!r}; positive class: {report.positive}",
        f"# cases: {report.n_total}; folds: {len(report.folds) or '-'}",
        f"# Dice before filtering: mean {report.mean_before:.4f}, median {report.median_before:.4f}",
    ]
    header = ("Metric", "Overall", "Fold mean", "Fold median")
    rows = [(label, *_cells(report, attr, _human)) for label, attr in TABLE_ROWS]
    width = max(len(r[0]) for r in rows)
    lines.append(f"{header[0]:<{width}}  {header[1]:>10}  {header[2]:>10}  {header[3]:>11}")
    for label, a, b, c in rows:
        lines.append(f"{label:<{width}}  {a:>10}  {b:>10}  {c:>11}")
    return "\n".join(lines) + "\n"


def report_to_csv(report: GateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "overall", "fold_mean", "fold_median"])
    for label, attr in TABLE_ROWS:
        w.writerow([label, *_cells(report, attr, repr)])
    return buf.getvalue()


def write_report(report: GateReport, fmt: str, path) -> None:
    """Write ``report`` as ``json``, ``text`` or ``csv``."""
    render = {"json": report_to_json, "text": report_to_text, "csv": report_to_csv}
    if fmt not in render:
        raise ValueError(f"unknown report format {fmt!r}")
    Path(path).write_text(render[fmt](report))
