"""Occupancy evaluation metrics: geometric IoU, per-class IoU/mIoU, and
cross-entropy / binary-cross-entropy / Dice computed as metrics.

Class 0 is free space.  mIoU averages the semantic (non-free) classes
whose union is non-empty; classes absent from both prediction and ground
truth are flagged undefined and excluded from the mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricsReport", "iou_report", "loss_metrics", "LOG_FLOOR"]

LOG_FLOOR = 1e-12


@dataclass
class MetricsReport:
    geometric_iou: float
    per_class_iou: list  # one entry per class; None where IoU is undefined
    mean_iou: float
    losses: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "geometric_iou": self.geometric_iou,
            "per_class_iou": self.per_class_iou,
            "mean_iou": self.mean_iou,
            "ce": self.losses.get("ce"),
            "bce": self.losses.get("bce"),
            "dice": self.losses.get("dice"),
        }
        return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def iou_report(pred_labels: np.ndarray, gt_labels: np.ndarray, num_classes: int) -> MetricsReport:
    """IoU metrics between two dense integer label grids of equal dims."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError(f"grid dims differ: {pred_labels.shape} vs {gt_labels.shape}")

    pred_occ = pred_labels != 0
    gt_occ = gt_labels != 0
    union = np.count_nonzero(pred_occ | gt_occ)
    inter = np.count_nonzero(pred_occ & gt_occ)
    geometric = inter / union if union else 0.0

    per_class: list = []
    defined = []
    for c in range(num_classes):
        p = pred_labels == c
        g = gt_labels == c
        u = np.count_nonzero(p | g)
        if u == 0:
            per_class.append(None)
            continue
        iou = np.count_nonzero(p & g) / u
        per_class.append(iou)
        if c != 0:
            defined.append(iou)
    mean = float(np.mean(defined)) if defined else 0.0
    return MetricsReport(float(geometric), per_class, mean)


def loss_metrics(pred_scores: np.ndarray, gt_labels: np.ndarray) -> dict:
    """CE / BCE / Dice of a dense S-channel score grid against labels.

    ``pred_scores`` rows must be distributions; occupancy probability is
    1 - p(class 0) and the Dice term compares that soft mask against the
    binary ground-truth occupancy.
    """
    scores = np.asarray(pred_scores, dtype=np.float64)
    gt = np.asarray(gt_labels)
    if scores.shape[:-1] != gt.shape:
        raise ValueError(f"score grid {scores.shape[:-1]} does not match labels {gt.shape}")

    flat = scores.reshape(-1, scores.shape[-1])
    labels = gt.reshape(-1)
    p_true = flat[np.arange(len(labels)), labels]
    ce = float(np.mean(-np.log(np.maximum(p_true, LOG_FLOOR))))

    p_occ = 1.0 - flat[:, 0]
    occ = (labels != 0).astype(np.float64)
    bce = float(np.mean(
        -occ * np.log(np.maximum(p_occ, LOG_FLOOR))
        - (1.0 - occ) * np.log(np.maximum(1.0 - p_occ, LOG_FLOOR))))

    denom = p_occ.sum() + occ.sum()
    dice = float(1.0 - 2.0 * (p_occ * occ).sum() / denom) if denom > 0 else 0.0
    return {"ce": ce, "bce": bce, "dice": dice}
