"""Overall IoU and Prec@X."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


def _pair(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def intersection_union(pred, gt):
    pred, gt = _pair(pred, gt)
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt))


def iou(pred, gt) -> float:
    """|pred & gt| / |pred | gt|; 1.0 when both masks are empty."""
    i, u = intersection_union(pred, gt)
    return 1.0 if u == 0 else i / u


def overall_iou(samples) -> float:
    """Summed intersections over summed unions (not a mean of IoUs)."""
    samples = list(samples)
    if not samples:
        raise ValueError("overall_iou needs at least one sample")
    inter = union = 0
    for pred, gt in samples:
        i, u = intersection_union(pred, gt)
        inter += i
        union += u
    return 1.0 if union == 0 else inter / union


def prec_at(samples=None, X=0.5, ious=None) -> float:
    """Fraction of samples whose IoU is strictly above ``X``."""
    if not 0.0 < X < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {X}")
    if ious is None:
        ious = [iou(p, g) for p, g in samples]
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        return 0.0
    return float(np.mean(ious > X))


@dataclass
class EvalReport:
    overall_iou: float
    prec: dict
    ious: list = field(repr=False)
    n: int = 0

    def to_dict(self):
        return {"overall_iou": self.overall_iou,
                "prec": {f"{k:.1f}": v for k, v in self.prec.items()},
                "n": self.n, "ious": self.ious}

    def to_json(self, **extra):
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, sort_keys=True, indent=1)

    def table(self):
        rows = [("Overall IoU", self.overall_iou)]
        rows += [(f"Prec@{k:.1f}", v) for k, v in self.prec.items()]
        width = max(len(r[0]) for r in rows)
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  ------"]
        lines += [f"{name:<{width}}  {100 * v:6.2f}" for name, v in rows]
        lines.append(f"{'samples':<{width}}  {self.n:6d}")
        return "\n".join(lines)


def evaluate(preds, gts, thresholds=THRESHOLDS) -> EvalReport:
    pairs = list(zip(preds, gts))
    ious = [iou(p, g) for p, g in pairs]
    return EvalReport(overall_iou=overall_iou(pairs),
                      prec={x: prec_at(X=x, ious=ious) for x in thresholds},
                      ious=ious, n=len(pairs))
