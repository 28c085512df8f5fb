"""Tracking metrics: IoU, precision at a center-distance threshold, and the
success-rate AUC over IoU thresholds 0, 0.05, ..., 1.0."""

from __future__ import annotations

import numpy as np

SR_THRESHOLDS = np.arange(0, 21) * 0.05


def _as_xywh(box) -> np.ndarray:
    if hasattr(box, "as_array"):
        return box.as_array()
    return np.asarray(box, dtype=np.float64)


def iou(box_a, box_b) -> float:
    ax, ay, aw, ah = _as_xywh(box_a)
    bx, by, bw, bh = _as_xywh(box_b)
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def center_distance(box_a, box_b) -> float:
    ax, ay, aw, ah = _as_xywh(box_a)
    bx, by, bw, bh = _as_xywh(box_b)
    return float(np.hypot((ax + aw / 2) - (bx + bw / 2), (ay + ah / 2) - (by + bh / 2)))


def eval_metrics(pred_boxes, gt_boxes, precision_px: float = 20.0) -> dict:
    """Mean IoU, PR at the pixel threshold, success-rate AUC.

    Success at threshold tau counts frames with IoU >= tau; the AUC is the
    mean success over the 21 sampled thresholds.
    """
    if len(pred_boxes) == 0 or len(pred_boxes) != len(gt_boxes):
        raise ValueError(f"box lists empty or mismatched: {len(pred_boxes)} vs {len(gt_boxes)}")
    ious = np.array([iou(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    dists = np.array([center_distance(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    success = (ious[None, :] >= SR_THRESHOLDS[:, None]).mean(axis=1)
    return {
        "mean_iou": float(ious.mean()),
        "pr20": float((dists <= precision_px).mean()),
        "sr_auc": float(success.mean()),
        "per_frame_iou": ious,
        "per_frame_dist": dists,
    }
