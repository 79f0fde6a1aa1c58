"""Batched array kernels for rotated-box detection pipelines.

Array-in / array-out wrappers over a C++ core that reproduces the rboxkit
reference implementation bit-for-bit and releases the GIL during compute.
Inputs are taken as zero-copy views when they are already C-contiguous
float64 and copied otherwise; outputs are always freshly allocated.
"""
from __future__ import annotations

import numpy as np

from . import _core

__version__ = "0.1.0"

__all__ = [
    "batched_riou",
    "batched_rnms",
    "encode",
    "decode",
    "smooth_l1",
    "focal_loss",
    "iou_smooth_l1",
    "rasterize_masks",
]


def _as_boxes(arr, name: str) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2 or (out.size and out.shape[1] != 5):
        raise ValueError(f"{name} must be an (N, 5) array of (cx, cy, w, h, theta), got {out.shape}")
    return out.reshape(-1, 5)


def batched_riou(a, b) -> np.ndarray:
    """Pairwise rotated IoU between (N, 5) and (M, 5) boxes -> (N, M)."""
    a = _as_boxes(a, "a")
    b = _as_boxes(b, "b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return _core.batched_riou(a, b)


def batched_rnms(boxes, scores, threshold: float) -> np.ndarray:
    """Greedy rotated NMS; kept indices in descending score order."""
    boxes = _as_boxes(boxes, "boxes")
    scores = np.ascontiguousarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] == 0:
        if scores.size:
            raise ValueError("boxes and scores length mismatch")
        return np.zeros(0, dtype=np.int64)
    return _core.batched_rnms(boxes, scores, float(threshold))


def encode(gt, anchors) -> np.ndarray:
    """Row-wise box -> offset targets (tx, ty, tw, th, ttheta)."""
    gt = _as_boxes(gt, "gt")
    anchors = _as_boxes(anchors, "anchors")
    if gt.shape[0] == 0:
        return np.zeros((0, 5))
    return _core.encode(gt, anchors)


def decode(targets, anchors) -> np.ndarray:
    """Row-wise offsets -> canonical boxes; raises OverflowError on blow-up."""
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if targets.ndim != 2 or (targets.size and targets.shape[1] != 5):
        raise ValueError(f"targets must be (N, 5), got {targets.shape}")
    anchors = _as_boxes(anchors, "anchors")
    if targets.shape[0] == 0:
        return np.zeros((0, 5))
    return _core.decode(targets.reshape(-1, 5), anchors)


def smooth_l1(x, beta=1.0) -> np.ndarray:
    """Elementwise smooth L1; beta broadcasts from a scalar."""
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    beta_arr = np.broadcast_to(np.asarray(beta, dtype=np.float64), x.shape)
    return _core.smooth_l1(x, np.ascontiguousarray(beta_arr))


def focal_loss(p, target, alpha=0.25, gamma=2.0) -> np.ndarray:
    """Elementwise focal loss on sigmoid probabilities; targets in {0, 1}."""
    p = np.ascontiguousarray(p, dtype=np.float64).reshape(-1)
    target = np.ascontiguousarray(target, dtype=np.int64).reshape(-1)
    alpha_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(alpha, dtype=np.float64), p.shape))
    gamma_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(gamma, dtype=np.float64), p.shape))
    return _core.focal_loss(p, target, alpha_arr, gamma_arr)


def iou_smooth_l1(v_pred, v_gt, anchors, beta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise IoU-weighted smooth L1: returns (values (N,), gradients (N, 5))."""
    v_pred = np.ascontiguousarray(v_pred, dtype=np.float64).reshape(-1, 5)
    v_gt = np.ascontiguousarray(v_gt, dtype=np.float64).reshape(-1, 5)
    anchors = _as_boxes(anchors, "anchors")
    return _core.iou_smooth_l1(v_pred, v_gt, anchors, float(beta))


def rasterize_masks(quads, labels, canvas: tuple[int, int], stride: float = 1.0) -> np.ndarray:
    """Label-map rasterization of (K, 4, 2) quads; smaller quads win overlaps."""
    quads = np.ascontiguousarray(quads, dtype=np.float64)
    if quads.size == 0:
        quads = quads.reshape(0, 4, 2)
    if quads.ndim != 3 or quads.shape[1:] != (4, 2):
        raise ValueError(f"quads must be (K, 4, 2), got {quads.shape}")
    labels = np.ascontiguousarray(labels, dtype=np.int64).reshape(-1)
    h, w = canvas
    return _core.rasterize_masks(quads, labels, int(h), int(w), float(stride))
