"""Landmark evaluation: NRMSE, CDF, AUC over [0, 0.5] and the mean-shape baseline."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import FULL, Dataset, denormalize

log = logging.getLogger(__name__)

# NRMSE grid used for the curve and the AUC: 0, 0.001, ..., 0.5
CDF_GRID = np.arange(501) / 1000.0

EyeSpec = tuple[Sequence[int], Sequence[int]]


class DegenerateShapeError(ValueError):
    pass


def _shape(s) -> np.ndarray:
    p = np.asarray(s, dtype=np.float64)
    p = p.reshape(-1, 2)
    if len(p) < 2:
        raise ValueError("a shape needs at least two points")
    return p


def interocular(gt, eyes: EyeSpec) -> float:
    """Distance between the centroids of the two ground-truth eye groups."""
    p = _shape(gt)
    left, right = eyes
    if not len(left) or not len(right):
        raise ValueError("eye groups must be non-empty")
    d = float(np.linalg.norm(p[list(left)].mean(axis=0) - p[list(right)].mean(axis=0)))
    if not d > 0.0:
        raise DegenerateShapeError("ground-truth eyes coincide")
    return d


def nrmse(pred, gt, eyes: EyeSpec) -> float:
    sp, sg = _shape(pred), _shape(gt)
    if sp.shape != sg.shape:
        raise ValueError(f"shapes have {len(sp)} and {len(sg)} points")
    D = interocular(sg, eyes)
    return float(np.linalg.norm(sp - sg, axis=1).sum() / (len(sg) * D))


def cdf(errors, x: float) -> float:
    """Fraction of errors less than or equal to ``x``."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("cdf of an empty error list")
    return float(np.count_nonzero(e <= x)) / e.size


def cdf_curve(errors, grid=CDF_GRID) -> np.ndarray:
    e = np.sort(np.asarray(errors, dtype=np.float64))
    if e.size == 0:
        raise ValueError("cdf of an empty error list")
    return np.searchsorted(e, grid, side="right") / e.size


def auc(errors) -> float:
    """Area under the CDF over [0, 0.5], as a percentage of the full box."""
    return float(100.0 * cdf_curve(errors).mean())


class MeanShape:
    """Constant predictor returning the average training label."""

    def __init__(self, y_mean: np.ndarray):
        self.y_mean = np.asarray(y_mean, dtype=np.float64).reshape(-1, 1)

    def __call__(self, X) -> np.ndarray:
        n = np.asarray(X).shape[1]
        return np.repeat(self.y_mean, n, axis=1)


def mean_shape(train: Dataset) -> MeanShape:
    ys = [s.y for s in train.samples if s.y is not None]
    if not ys:
        raise ValueError("training set has no labels")
    return MeanShape(np.mean(np.stack(ys), axis=0))


@dataclass
class EvalReport:
    sample_ids: list[int]
    per_sample_nrmse: np.ndarray
    cdf_x: np.ndarray
    cdf_y: np.ndarray
    auc: float
    cdf_at_0_1: float
    n_excluded: int = 0

    def summary(self) -> str:
        return f"auc={self.auc:.4f} cdf_0.1={self.cdf_at_0_1:.4f} n={len(self.sample_ids)}"

    def write_csvs(self, errors_path, cdf_path) -> None:
        with open(errors_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["sample_id", "nrmse"])
            w.writerows([i, repr(float(e))] for i, e in zip(self.sample_ids, self.per_sample_nrmse))
        with open(cdf_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["x", "cdf"])
            w.writerows([repr(float(x)), repr(float(c))] for x, c in zip(self.cdf_x, self.cdf_y))


def evaluate(predictor: Callable[[np.ndarray], np.ndarray], test: Dataset, eyes: EyeSpec,
             img_side: int | None = None) -> EvalReport:
    """Predict every fully labeled test sample and score it in pixel space.

    ``predictor`` maps an (d_x, n) input matrix to (2N, n) normalized
    landmarks; a ``Framework`` can be passed through its ``predict`` method.
    Samples with a degenerate ground-truth shape are skipped and counted.
    CDF percentages are reported in [0, 100].
    """
    side = img_side if img_side is not None else test.img_side
    if side is None:
        raise ValueError("img_side is required to score in pixels")
    ids = [i for i, s in enumerate(test.samples) if s.kind == FULL]
    if not ids:
        raise ValueError("test set has no fully labeled samples")
    X = np.stack([test.samples[i].x for i in ids], axis=1)
    P = np.asarray(predictor(X))
    kept, errs, excluded = [], [], 0
    for col, i in enumerate(ids):
        gt = denormalize(test.samples[i].y, side)
        try:
            errs.append(nrmse(denormalize(P[:, col], side), gt, eyes))
        except DegenerateShapeError:
            excluded += 1
            continue
        kept.append(i)
    if excluded:
        log.warning("excluded %d test samples with degenerate ground truth", excluded)
    if not errs:
        raise ValueError("no scorable test samples")
    errs = np.asarray(errs)
    curve = cdf_curve(errs)
    return EvalReport(kept, errs, CDF_GRID.copy(), curve, auc(errs), 100.0 * cdf(errs, 0.1),
                      n_excluded=excluded)
