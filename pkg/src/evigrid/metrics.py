"""Evaluation metrics: per-class IoU and conditional state probabilities.

Both metrics pool cell counts over all frames of a split by default;
per-frame averaging is available behind a flag.  Classes absent from
both prediction and reference are undefined and excluded from the mean
rather than counted as zero, which keeps small synthetic scenes
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GridGeometryError
from .evidential import CellClass, classify_planes
from .labels import LabelImage

_N_CLASSES = 3


@dataclass(frozen=True)
class IouReport:
    """Per-class intersection over union; None marks an undefined class."""

    iou_free: float | None
    iou_occupied: float | None
    iou_unknown: float | None
    miou: float | None

    def as_dict(self) -> dict:
        return {
            "iou_free": self.iou_free,
            "iou_occupied": self.iou_occupied,
            "iou_unknown": self.iou_unknown,
            "miou": self.miou,
        }


@dataclass(frozen=True)
class CondProbReport:
    """p(estimate | reference) for reference free/occupied cells.

    ``matrix`` is 2x3: rows reference (free, occupied), columns estimate
    (free, occupied, unknown).  Rows without reference support are NaN.
    """

    matrix: np.ndarray

    @property
    def p_free_given_free(self) -> float:
        return float(self.matrix[0, 0])

    @property
    def p_occ_given_occ(self) -> float:
        return float(self.matrix[1, 1])

    def as_dict(self) -> dict:
        keys = [
            ["p_est_free_given_free", "p_est_occ_given_free", "p_est_unknown_given_free"],
            ["p_est_free_given_occ", "p_est_occ_given_occ", "p_est_unknown_given_occ"],
        ]
        out = {}
        for i in range(2):
            for j in range(3):
                v = float(self.matrix[i, j])
                out[keys[i][j]] = None if np.isnan(v) else v
        return out


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise GridGeometryError(f"image dimensions differ: {a.shape} vs {b.shape}")


def _iou_counts(pred: np.ndarray, ref: np.ndarray):
    inter = np.zeros(_N_CLASSES, dtype=np.int64)
    union = np.zeros(_N_CLASSES, dtype=np.int64)
    for c in range(_N_CLASSES):
        p, r = pred == c, ref == c
        inter[c] = np.count_nonzero(p & r)
        union[c] = np.count_nonzero(p | r)
    return inter, union


def _report_from_counts(inter: np.ndarray, union: np.ndarray) -> IouReport:
    vals: list[float | None] = []
    for c in range(_N_CLASSES):
        vals.append(float(inter[c] / union[c]) if union[c] else None)
    defined = [v for v in vals if v is not None]
    miou = float(np.mean(defined)) if defined else None
    return IouReport(vals[CellClass.FREE], vals[CellClass.OCCUPIED], vals[CellClass.UNKNOWN], miou)


def class_iou(pred: LabelImage, ref: LabelImage) -> IouReport:
    """Per-class IoU between two label images of the same geometry."""
    _check_same_shape(pred.classes, ref.classes)
    return _report_from_counts(*_iou_counts(pred.classes, ref.classes))


def class_iou_many(
    preds: Sequence[LabelImage], refs: Sequence[LabelImage], per_frame: bool = False
) -> IouReport:
    """IoU over a split: counts pooled over all cells, or the mean of
    per-frame reports when ``per_frame`` is set."""
    if len(preds) != len(refs) or not preds:
        raise ValueError("need matching, non-empty prediction/reference lists")
    if per_frame:
        reports = [class_iou(p, r) for p, r in zip(preds, refs)]
        fields = ["iou_free", "iou_occupied", "iou_unknown", "miou"]
        means = []
        for name in fields:
            vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
            means.append(float(np.mean(vals)) if vals else None)
        return IouReport(*means)
    inter = np.zeros(_N_CLASSES, dtype=np.int64)
    union = np.zeros(_N_CLASSES, dtype=np.int64)
    for p, r in zip(preds, refs):
        _check_same_shape(p.classes, r.classes)
        i, u = _iou_counts(p.classes, r.classes)
        inter += i
        union += u
    return _report_from_counts(inter, union)


def conditional_probs(
    pred_masses: Sequence[np.ndarray], refs: Sequence[LabelImage]
) -> CondProbReport:
    """p(estimated class | reference class) pooled over a split.

    ``pred_masses`` are (..., 3) evidential stacks; predictions are
    classified by largest mass.  Reference unknown cells carry no truth
    and are excluded from scoring.
    """
    if len(pred_masses) != len(refs) or not pred_masses:
        raise ValueError("need matching, non-empty prediction/reference lists")
    counts = np.zeros((2, _N_CLASSES), dtype=np.int64)
    for masses, ref in zip(pred_masses, refs):
        pred = classify_planes(np.asarray(masses))
        _check_same_shape(pred, ref.classes)
        for ref_class in (CellClass.FREE, CellClass.OCCUPIED):
            sel = ref.classes == ref_class
            if not sel.any():
                continue
            counts[int(ref_class)] += np.bincount(
                pred[sel].astype(int), minlength=_N_CLASSES
            )
    matrix = np.full((2, _N_CLASSES), np.nan)
    for i in range(2):
        support = counts[i].sum()
        if support:
            matrix[i] = counts[i] / support
    return CondProbReport(matrix)
