"""Cohort-level steps shared by the command line and library users.

The CLI only parses options, calls these functions and writes files, so a
library call with the same arguments gives byte-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .gate import CaseRecord
from .maps import entropy_map, error_map, mc_average, voxelwise_sum
from .metrics import dice_coefficient, mae
from .regressor import RegressorModel, TrainConfig, extract_features, train_regressor
from .synth import ManifestEntry
from .volio import load_volume
from .volume import binarize

# training : validation share of the non-test cases (68 : 16 of 105)
TRAIN_SHARE = 68 / 84


def assign_folds(ids: Sequence[str], k: int, seed: int) -> dict[str, int]:
    """Randomly assign case ids to ``k`` folds of near-equal size.

    The assignment depends only on the sorted id set, ``k`` and ``seed``.
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    ordered = sorted(ids)
    if len(ordered) < k:
        raise ValueError(f"{len(ordered)} cases cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(ordered))
    return {ordered[j]: i % k for i, j in enumerate(perm)}


@dataclass(frozen=True)
class CaseMaps:
    image: np.ndarray
    gt: np.ndarray
    average: np.ndarray
    reconstruction: np.ndarray

    def aux(self, kind: str) -> np.ndarray:
        if kind == "image":
            return self.image
        if kind == "uncertainty":
            return entropy_map(self.average)
        if kind == "error":
            return error_map(self.image, self.reconstruction)
        raise ValueError(f"unknown pair kind {kind!r}")


def load_case(entry: ManifestEntry) -> CaseMaps:
    image = load_volume(entry.image_path)[1]
    gt = load_volume(entry.gt_path)[1] > 0.5
    average = mc_average([load_volume(p)[1] for p in entry.sample_paths])
    recon = load_volume(entry.recon_path)[1]
    return CaseMaps(image=image, gt=gt, average=average, reconstruction=recon)


def score_case(entry: ManifestEntry, absolute_error: bool = False) -> CaseRecord:
    maps = load_case(entry)
    return CaseRecord(
        id=entry.id,
        true_dice=dice_coefficient(binarize(maps.average), maps.gt),
        uncertainty_vs=voxelwise_sum(entropy_map(maps.average)),
        error_vs=voxelwise_sum(error_map(maps.image, maps.reconstruction), absolute=absolute_error),
    )


def score_cohort(
    entries: Sequence[ManifestEntry], folds: int | None = 5, seed: int = 0, absolute_error: bool = False
) -> list[CaseRecord]:
    """Ground-truth Dice and both voxel-wise sums for every case, sorted by id."""
    cases = [score_case(e, absolute_error) for e in entries]
    if folds:
        assignment = assign_folds([c.id for c in cases], folds, seed)
        cases = [replace(c, fold=assignment[c.id]) for c in cases]
    return sorted(cases, key=lambda c: c.id)


def cohort_features(entries: Sequence[ManifestEntry], kind: str) -> dict[str, np.ndarray]:
    out = {}
    for e in entries:
        maps = load_case(e)
        out[e.id] = extract_features(maps.aux(kind), maps.average, kind)
    return out


@dataclass
class FoldResult:
    fold: int
    model: RegressorModel
    history: list[float]
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]
    val_mae: float | None
    test_mae: float


def cross_validate(
    cases: Sequence[CaseRecord], features: dict[str, np.ndarray], cfg: TrainConfig, kind: str
) -> tuple[list[FoldResult], list[CaseRecord]]:
    """Train one regressor per fold and predict each fold's held-out cases.

    Every case needs ``fold`` and ``true_dice``. Non-test cases are split
    into training and validation sets in a 68:16 ratio; validation MAE is
    reported but not used for model selection. Returns the per-fold results
    and the cases with out-of-fold ``predicted_dice`` filled in.
    """
    cases = sorted(cases, key=lambda c: c.id)
    for c in cases:
        if c.fold is None or c.true_dice is None:
            raise ValueError(f"case {c.id!r} needs both a fold and a true Dice for training")
    folds = sorted({c.fold for c in cases})
    if len(folds) < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    dice = {c.id: c.true_dice for c in cases}
    predicted: dict[str, float] = {}
    results = []
    for k in folds:
        test_ids = [c.id for c in cases if c.fold == k]
        rest = [c.id for c in cases if c.fold != k]
        perm = np.random.default_rng([cfg.seed, k]).permutation(len(rest))
        n_train = max(int(round(TRAIN_SHARE * len(rest))), 2 * cfg.batch_size)
        n_train = min(n_train, len(rest))
        train_ids = sorted(rest[i] for i in perm[:n_train])
        val_ids = sorted(rest[i] for i in perm[n_train:])
        X = np.array([features[i] for i in train_ids])
        y = np.array([dice[i] for i in train_ids])
        model, history = train_regressor((X, y), replace(cfg, seed=cfg.seed + k), kind=kind)
        val_mae = None
        if val_ids:
            val_pred = model.predict_batch(np.array([features[i] for i in val_ids]))
            val_mae = mae(val_pred, [dice[i] for i in val_ids])
        test_pred = model.predict_batch(np.array([features[i] for i in test_ids]))
        for i, p in zip(test_ids, test_pred):
            predicted[i] = float(p)
        results.append(
            FoldResult(k, model, history, train_ids, val_ids, test_ids, val_mae,
                       mae(test_pred, [dice[i] for i in test_ids]))
        )
    return results, [replace(c, predicted_dice=predicted[c.id]) for c in cases]


def predict_cases(
    model: RegressorModel, cases: Sequence[CaseRecord], features: dict[str, np.ndarray]
) -> list[CaseRecord]:
    ids = [c.id for c in cases]
    preds = model.predict_batch(np.array([features[i] for i in ids]))
    return sorted((replace(c, predicted_dice=float(p)) for c, p in zip(cases, preds)), key=lambda c: c.id)
