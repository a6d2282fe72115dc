"""Confusion-count segmentation metrics: accuracy, F1 and Jaccard similarity.

Counts are plain integers and merge by addition, so dataset-level metrics can
be pixel-pooled across images (the default reporting mode). The 0/0 cases are
fixed conventions: F1 and JS are 1.0 when ground truth and prediction are both
empty.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.tn + other.tn,
            self.fp + other.fp,
            self.fn + other.fn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold probabilities into a {0,1} mask; ties go to 1."""
    if prob.size and (prob.min() < 0 or prob.max() > 1):
        raise ShapeError("binarize input must lie in [0, 1]")
    return (prob >= threshold).astype(prob.dtype)


def _as_bool_mask(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isin(arr, (0, 1)).all():
        raise ShapeError(f"{what} must be strictly binary (0/1 values)")
    return arr > 0.5


def confusion(gt: np.ndarray, sr: np.ndarray) -> ConfusionCounts:
    """Pixelwise tallies of a segmentation result sr against ground truth gt."""
    if gt.shape != sr.shape:
        raise ShapeError(f"mask shapes differ: {gt.shape} vs {sr.shape}")
    g = _as_bool_mask(gt, "ground truth")
    s = _as_bool_mask(sr, "segmentation result")
    tp = int(np.count_nonzero(g & s))
    fp = int(np.count_nonzero(~g & s))
    fn = int(np.count_nonzero(g & ~s))
    tn = g.size - tp - fp - fn
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def _require_pixels(cc: ConfusionCounts):
    if cc.total <= 0:
        raise ShapeError("metrics need at least one pixel")


def accuracy(cc: ConfusionCounts) -> float:
    _require_pixels(cc)
    return (cc.tp + cc.tn) / cc.total


def f1(cc: ConfusionCounts) -> float:
    """F1 = 2|GT n SR| / (|GT| + |SR|); 1.0 when both masks are empty."""
    _require_pixels(cc)
    denom = 2 * cc.tp + cc.fp + cc.fn
    return 1.0 if denom == 0 else 2 * cc.tp / denom


def jaccard(cc: ConfusionCounts) -> float:
    """JS = |GT n SR| / |GT u SR|; 1.0 when both masks are empty."""
    _require_pixels(cc)
    denom = cc.tp + cc.fp + cc.fn
    return 1.0 if denom == 0 else cc.tp / denom


def metrics_record(cc: ConfusionCounts) -> dict:
    """Structured record {ac, f1, js, tp, tn, fp, fn}."""
    return {
        "ac": accuracy(cc),
        "f1": f1(cc),
        "js": jaccard(cc),
        "tp": cc.tp,
        "tn": cc.tn,
        "fp": cc.fp,
        "fn": cc.fn,
    }
