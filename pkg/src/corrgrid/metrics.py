"""Decision rules and evaluation metrics.

All thresholds compare with ``>=``. Ratios whose denominator is zero evaluate
to 0 and are listed in ``undefined`` instead of producing NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import BoundingBox, ImageDescriptor, PolygonMask, check_confidence_matrix, rasterize_mask

DEFAULT_IOU_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionConfig:
    tau_s: float = 0.5
    tau_I: Optional[float] = 0.1
    tau_o: float = 0.9
    iou_thresholds: tuple = DEFAULT_IOU_THRESHOLDS

    def __post_init__(self):
        for name in ("tau_s", "tau_I", "tau_o"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise MetricError(f"{name}={v} outside [0, 1]")
        th = tuple(float(t) for t in self.iou_thresholds)
        if not th or any(not 0.0 <= t <= 1.0 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise MetricError("iou_thresholds must be strictly increasing values in [0, 1]")
        object.__setattr__(self, "iou_thresholds", th)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise MetricError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true).astype(bool).ravel()
        p = np.asarray(y_pred).astype(bool).ravel()
        if t.shape != p.shape:
            raise MetricError("prediction and truth lengths differ")
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class Scores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: frozenset = field(default_factory=frozenset)

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "undefined": sorted(self.undefined)}


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.add(name)
        return 0.0
    return num / den


def confusion_metrics(c: ConfusionCounts) -> Scores:
    if c.total == 0:
        raise MetricError("all confusion counts are zero")
    undefined = set()
    acc = (c.tp + c.tn) / c.total
    p = _ratio(c.tp, c.tp + c.fp, "precision", undefined)
    r = _ratio(c.tp, c.tp + c.fn, "recall", undefined)
    f1 = _ratio(2 * p * r, p + r, "f1", undefined)
    return Scores(acc, p, r, f1, frozenset(undefined))


# -- decision layer -----------------------------------------------------------

def slp_decide(cs, tau_s: float = 0.5) -> np.ndarray:
    return (check_confidence_matrix(cs) >= tau_s).astype(np.uint8)


def image_confidence(b_hat) -> float:
    b = np.asarray(b_hat)
    return float(b.sum()) / b.size


def ilp_decide(conf_c: float, tau_I: float = 0.1) -> bool:
    """True means the image is predicted corroded."""
    if not 0.0 <= conf_c <= 1.0:
        raise MetricError(f"conf_c={conf_c} outside [0, 1]")
    return conf_c >= tau_I


def derive_tau_I(train_truths: Sequence) -> float:
    """Mean over images of the fraction of corroded cells."""
    if len(train_truths) == 0:
        raise MetricError("no training matrices to derive tau_I from")
    return float(np.mean([np.asarray(b).sum() / np.asarray(b).size for b in train_truths]))


def iop_decide(det, tau_o: float = 0.9) -> bool:
    """True means the target object is present; ``det`` may be ``None``."""
    return det is not None and det.conf_o >= tau_o


# -- IoU / AP -----------------------------------------------------------------

def iou_mask(pred: PolygonMask, truth: PolygonMask, image: ImageDescriptor) -> float:
    a = rasterize_mask(pred, image).membership
    b = rasterize_mask(truth, image).membership
    union = int(np.sum(a | b))
    if union == 0:
        raise MetricError("both masks have zero area")
    return int(np.sum(a & b)) / union


def iou_bbox(pred: BoundingBox, truth: BoundingBox) -> float:
    iw = min(pred.x_max, truth.x_max) - max(pred.x_min, truth.x_min)
    ih = min(pred.y_max, truth.y_max) - max(pred.y_min, truth.y_min)
    inter = max(iw, 0) * max(ih, 0)
    return inter / (pred.area + truth.area - inter)


def precision_at_iou(ious: Sequence[float], confs_pass: Sequence[bool], th: float) -> float:
    """Among accepted detections, TP are those with IoU >= ``th``; the rest are FP."""
    ious = np.asarray(ious, dtype=float)
    accepted = np.asarray(confs_pass, dtype=bool)
    if ious.shape != accepted.shape:
        raise MetricError("ious and confs_pass are not aligned")
    if not accepted.any():
        raise MetricError("no accepted detections")
    return float(np.sum(ious[accepted] >= th)) / int(accepted.sum())


def average_precision(precisions: Sequence[float]) -> float:
    if len(precisions) == 0:
        raise MetricError("no precision values to average")
    return float(np.mean(precisions))


def precision_table(ious, confs_pass, thresholds=DEFAULT_IOU_THRESHOLDS) -> dict:
    precisions = [precision_at_iou(ious, confs_pass, t) for t in thresholds]
    return {"thresholds": list(thresholds), "precision": precisions,
            "ap": average_precision(precisions)}
