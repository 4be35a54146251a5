"""Failure gating on quality scores and evaluation of a gate against true Dice."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Literal, Sequence

from .errors import DegenerateInputError, MissingScoreError
from .metrics import ConfusionCounts, confusion_counts, mae, pearson_r

ScoreKind = Literal["uncertainty_vs", "error_vs", "predicted_dice"]
SCORE_KINDS = ("uncertainty_vs", "error_vs", "predicted_dice")
FlagWhen = Literal["below", "above"]

DICE_FAIL_THRESHOLD = 0.75
COHORT_COLUMNS = ("id", "fold", "true_dice", "uncertainty_vs", "error_vs", "predicted_dice")


@dataclass(frozen=True)
class CaseRecord:
    id: str
    true_dice: float | None = None
    uncertainty_vs: float | None = None
    error_vs: float | None = None
    predicted_dice: float | None = None
    fold: int | None = None

    def __post_init__(self):
        if all(getattr(self, k) is None for k in ("true_dice", *SCORE_KINDS)):
            raise ValueError(f"case {self.id!r} carries no Dice or score value")
        for name in ("true_dice", "predicted_dice"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"case {self.id!r}: {name}={value} is outside [0, 1]")

    def score(self, kind: str) -> float:
        value = getattr(self, kind)
        if value is None:
            raise MissingScoreError(self.id, kind)
        return value


def _check_gate_args(score: str, flag_when: str) -> None:
    if score not in SCORE_KINDS:
        raise ValueError(f"unknown score {score!r}; expected one of {SCORE_KINDS}")
    if flag_when not in ("below", "above"):
        raise ValueError(f"flag_when must be 'below' or 'above', got {flag_when!r}")


def apply_gate(
    cases: Sequence[CaseRecord], score: ScoreKind, threshold: float, flag_when: FlagWhen = "below"
) -> tuple[list[str], list[str]]:
    """Partition case ids into (flagged, passed), keeping input order.

    Comparisons are strict, so a score equal to the threshold passes.
    """
    _check_gate_args(score, flag_when)
    values = [(c.id, c.score(score)) for c in cases]
    flagged, passed = [], []
    for case_id, value in values:
        hit = value < threshold if flag_when == "below" else value > threshold
        (flagged if hit else passed).append(case_id)
    return flagged, passed


def _mean(xs: Sequence[float]) -> float | None:
    return math.fsum(xs) / len(xs) if xs else None


def _median(xs: Sequence[float]) -> float | None:
    return float(statistics.median(xs)) if xs else None


FOLD_SUMMARY_METRICS = ("pearson_r", "mean_after", "median_after", "precision", "recall", "n_flagged", "mae")


@dataclass
class GateReport:
    score: str
    threshold: float
    flag_when: str
    dice_fail_threshold: float
    positive: str
    n_total: int
    n_flagged: int
    flagged_ids: list[str]
    mean_before: float
    median_before: float
    mean_after: float | None
    median_after: float | None
    precision: float | None
    recall: float | None
    counts: ConfusionCounts
    pearson_r: float | None
    mae: float | None
    fold: int | None = None
    folds: list["GateReport"] = field(default_factory=list)
    fold_summary: dict[str, dict[str, float | None]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["counts"] = asdict(self.counts)
        d["folds"] = [f.to_dict() for f in self.folds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GateReport":
        d = dict(d)
        d["counts"] = ConfusionCounts(**d["counts"])
        d["folds"] = [cls.from_dict(f) for f in d.get("folds", [])]
        return cls(**d)


def _evaluate(cases, score, threshold, flag_when, dice_fail_threshold, positive) -> GateReport:
    dice = {}
    for c in cases:
        if c.true_dice is None:
            raise MissingScoreError(c.id, "true_dice")
        dice[c.id] = c.true_dice
    flagged, passed = apply_gate(cases, score, threshold, flag_when)
    flagged_set = set(flagged)
    predicted_fail = [c.id in flagged_set for c in cases]
    true_fail = [c.true_dice < dice_fail_threshold for c in cases]
    counts = confusion_counts(predicted_fail, true_fail, positive)

    before = [c.true_dice for c in cases]
    after = [dice[i] for i in passed]
    scores = [c.score(score) for c in cases]
    try:
        r = pearson_r(scores, before)
    except DegenerateInputError:
        r = None
    err = mae(scores, before) if score == "predicted_dice" else None
    return GateReport(
        score=score,
        threshold=threshold,
        flag_when=flag_when,
        dice_fail_threshold=dice_fail_threshold,
        positive=positive,
        n_total=len(cases),
        n_flagged=len(flagged),
        flagged_ids=flagged,
        mean_before=_mean(before),
        median_before=_median(before),
        mean_after=_mean(after),
        median_after=_median(after),
        precision=counts.precision,
        recall=counts.recall,
        counts=counts,
        pearson_r=r,
        mae=err,
    )


def evaluate_gate(
    cases: Sequence[CaseRecord],
    score: ScoreKind,
    threshold: float,
    flag_when: FlagWhen = "below",
    dice_fail_threshold: float = DICE_FAIL_THRESHOLD,
    positive: Literal["fail", "pass"] = "fail",
) -> GateReport:
    """Gate the cohort and compare the outcome with ground-truth Dice.

    A case is a true failure when its Dice is strictly below
    ``dice_fail_threshold``. Cases carrying a fold index are additionally
    evaluated fold by fold; ``fold_summary`` holds the mean and median of
    each per-fold metric over the folds where it is defined. Undefined
    values (precision without flagged cases, correlation of a constant
    score, statistics over an empty set) are ``None``.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("cannot evaluate a gate on an empty cohort")
    if len({c.id for c in cases}) != len(cases):
        raise ValueError("case ids must be unique")
    _check_gate_args(score, flag_when)
    args = (score, threshold, flag_when, dice_fail_threshold, positive)
    report = _evaluate(cases, *args)

    fold_ids = sorted({c.fold for c in cases if c.fold is not None})
    for k in fold_ids:
        sub = [c for c in cases if c.fold == k]
        report.folds.append(replace(_evaluate(sub, *args), fold=k))
    if report.folds:
        for name in FOLD_SUMMARY_METRICS:
            values = [getattr(f, name) for f in report.folds if getattr(f, name) is not None]
            report.fold_summary[name] = {"mean": _mean(values), "median": _median(values)}
    return report


def _fmt(value) -> str:
    return "" if value is None else repr(value)


def write_cohort_csv(cases: Iterable[CaseRecord], path) -> None:
    """Write cases sorted by id; absent optional values become empty cells."""
    rows = sorted(cases, key=lambda c: c.id)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COHORT_COLUMNS)
        for c in rows:
            w.writerow([c.id] + [_fmt(getattr(c, k)) for k in COHORT_COLUMNS[1:]])


def read_cohort_csv(path) -> list[CaseRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COHORT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        cases = []
        for lineno, row in enumerate(reader, start=2):
            try:
                kw = {}
                for k in COHORT_COLUMNS[1:]:
                    cell = row[k].strip()
                    if cell:
                        kw[k] = int(cell) if k == "fold" else float(cell)
                cases.append(CaseRecord(id=row["id"], **kw))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return cases
