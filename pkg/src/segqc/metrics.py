"""Scalar quality metrics: Dice, SSIM terms, Pearson r, MAE, precision/recall."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateInputError
from .volume import as_binary_mask, as_scalar_volume, check_same_shape


def dice_coefficient(a, b) -> float:
    """Overlap ``2|a & b| / (|a| + |b|)``; two empty masks score 1."""
    a = as_binary_mask(a)
    b = as_binary_mask(b)
    check_same_shape(a, b)
    size = int(a.sum()) + int(b.sum())
    if size == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / size


def dice_loss(a, b) -> float:
    return 1.0 - dice_coefficient(a, b)


@dataclass(frozen=True)
class SSIMComponents:
    luminance: float
    contrast: float
    structure: float

    @property
    def ssim(self) -> float:
        return self.luminance * self.contrast * self.structure

    @property
    def ssim_loss(self) -> float:
        return 1.0 - self.ssim


def ssim_components(x, y, L: float = 1.0, standard: bool = False) -> SSIMComponents:
    """Global (whole-volume) SSIM luminance, contrast and structure terms.

    Statistics are population moments over all voxels. By default the
    contrast term uses the covariance in its numerator and the stabilising
    constants are ``0.01*L`` and ``0.03*L`` unsquared. ``standard=True``
    switches to the canonical Wang et al. form: ``2*sx*sy`` in the contrast
    numerator and squared constants.
    """
    x = as_scalar_volume(x)
    y = as_scalar_volume(y)
    check_same_shape(x, y)
    if standard:
        c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    else:
        c1, c2 = 0.01 * L, 0.03 * L
    c3 = c2 / 2.0

    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx = np.mean(dx * dx)
    vy = np.mean(dy * dy)
    cov = np.mean(dx * dy)
    sx, sy = math.sqrt(vx), math.sqrt(vy)

    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    if standard:
        con = (2.0 * sx * sy + c2) / (vx + vy + c2)
    else:
        con = (2.0 * cov + c2) / (vx + vy + c2)
    struct_ = (cov + c3) / (sx * sy + c3)
    return SSIMComponents(float(lum), float(con), float(struct_))


def ssim_loss(x, y, L: float = 1.0, standard: bool = False) -> float:
    return ssim_components(x, y, L, standard).ssim_loss


def _float_list(xs, name) -> list[float]:
    out = [float(x) for x in xs]
    if not all(math.isfinite(x) for x in out):
        raise ValueError(f"{name} contains non-finite values")
    return out


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation.

    All sums are correctly rounded (``math.fsum``), so the result does not
    depend on summation order.
    """
    x, y = _float_list(xs, "xs"), _float_list(ys, "ys")
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise DegenerateInputError(f"correlation needs at least 3 points, got {n}")
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("correlation undefined: an input has zero variance")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    r = sxy / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def mae(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = _float_list(xs, "xs"), _float_list(ys, "ys")
    if len(x) != len(y) or not x:
        raise ValueError(f"need two equal-length non-empty sequences, got {len(x)} and {len(y)}")
    return math.fsum(abs(a - b) for a, b in zip(x, y)) / len(x)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float | None:
        predicted = self.tp + self.fp
        return self.tp / predicted if predicted else None

    @property
    def recall(self) -> float | None:
        actual = self.tp + self.fn
        return self.tp / actual if actual else None


def confusion_counts(predicted_fail, true_fail, positive: Literal["fail", "pass"] = "fail") -> ConfusionCounts:
    pred = [bool(p) for p in predicted_fail]
    true = [bool(t) for t in true_fail]
    if len(pred) != len(true) or not pred:
        raise ValueError(f"need equal-length non-empty label sequences, got {len(pred)} and {len(true)}")
    if positive == "pass":
        pred = [not p for p in pred]
        true = [not t for t in true]
    elif positive != "fail":
        raise ValueError(f"positive class must be 'fail' or 'pass', got {positive!r}")
    tp = sum(p and t for p, t in zip(pred, true))
    fp = sum(p and not t for p, t in zip(pred, true))
    fn = sum(t and not p for p, t in zip(pred, true))
    tn = len(pred) - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def precision_recall(
    predicted_fail, true_fail, positive: Literal["fail", "pass"] = "fail"
) -> tuple[float | None, float | None, ConfusionCounts]:
    """Precision and recall for the chosen positive class.

    ``None`` marks an undefined value: precision with no predicted
    positives, recall with no actual positives.
    """
    counts = confusion_counts(predicted_fail, true_fail, positive)
    return counts.precision, counts.recall, counts
