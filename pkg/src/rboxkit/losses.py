"""Detection losses: smooth L1, focal, pixel-wise CE, and the IoU-weighted
smooth L1 for rotated regression, plus the multi-task assembler and the
angle-sweep landscape generator.

The rotated regression loss replaces the raw smooth-L1 magnitude with
|-log(IoU)| of the decoded boxes while keeping the smooth-L1 gradient
direction. Two equivalent parametrizations of the same rectangle (w/h
swapped, angle shifted by 90 degrees) then score identically, which removes
the loss spike at the angular boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .anchors import RegressionTarget, decode, encode
from .boxes import HBox, RBox5, canonicalize
from .errors import DegeneratePairError, EmptyBatchError
from .geometry import riou

# Angle residuals are degrees / 90 inside losses so the angular term is
# commensurate with the log-scale extent terms.
ANGLE_SCALE = 1.0 / 90.0

PROB_EPS = 1e-7
IOU_CLAMP = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and shape parameters; all term weights default to 1."""

    lambda_reg: float = 1.0
    lambda_cls: float = 1.0
    lambda_inld: float = 1.0
    smooth_l1_beta: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name in ("lambda_reg", "lambda_cls", "lambda_inld", "focal_alpha", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be > 0")


@dataclass(frozen=True)
class SampleBatch:
    """Per-anchor batch: labels (0 = background), objectness weights,
    per-class sigmoid probabilities, and predicted/target offsets.

    anchors must be provided in rotated mode (the IoU factor decodes
    against them).
    """

    labels: tuple[int, ...]
    objectness: tuple[float, ...]
    class_probs: tuple[tuple[float, ...], ...]
    pred_offsets: tuple[RegressionTarget, ...]
    target_offsets: tuple[RegressionTarget, ...]
    anchors: tuple[RBox5 | HBox, ...] | None = None

    def __post_init__(self):
        n = len(self.labels)
        for name in ("objectness", "class_probs", "pred_offsets", "target_offsets"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != {n} labels")
        if self.anchors is not None and len(self.anchors) != n:
            raise ValueError("anchors length mismatch")
        if any(not 0.0 <= p <= 1.0 for p in self.objectness):
            raise ValueError("objectness weights must lie in [0, 1]")
        for probs in self.class_probs:
            if any(not 0.0 <= p <= 1.0 for p in probs):
                raise ValueError("class probabilities must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)


def smooth_l1(x: float, beta: float = 1.0) -> float:
    """Huber-style loss: quadratic inside |x| < beta, linear outside."""
    ax = abs(x)
    if ax < beta:
        return 0.5 * x * x / beta
    return ax - 0.5 * beta


def smooth_l1_grad(x: float, beta: float = 1.0) -> float:
    if abs(x) < beta:
        return x / beta
    return math.copysign(1.0, x)


def focal_loss(p: float, target: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Focal loss on a single sigmoid probability; p is clamped at 1e-7."""
    if target not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {target!r}")
    p = min(max(p, PROB_EPS), 1.0 - PROB_EPS)
    if target == 1:
        return -alpha * (1.0 - p) ** gamma * math.log(p)
    return -(1.0 - alpha) * p**gamma * math.log(1.0 - p)


def focal_loss_grad(p: float, target: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """d focal / d p (for p strictly inside the clamp interval)."""
    p = min(max(p, PROB_EPS), 1.0 - PROB_EPS)
    if target == 1:
        return alpha * (gamma * (1.0 - p) ** (gamma - 1.0) * math.log(p) - (1.0 - p) ** gamma / p)
    return -(1.0 - alpha) * (gamma * p ** (gamma - 1.0) * math.log(1.0 - p) - p**gamma / (1.0 - p))


def pixelwise_ce(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over pixels of -log softmax(logits)[label].

    logits: (num_classes, H, W); labels: (H, W) ints in [0, num_classes).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 3 or labels.shape != logits.shape[1:]:
        raise ValueError(f"shape mismatch: logits {logits.shape}, labels {labels.shape}")
    k = logits.shape[0]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k - 1}]")
    m = logits.max(axis=0)
    lse = m + np.log(np.exp(logits - m).sum(axis=0))
    picked = np.take_along_axis(logits, labels[None], axis=0)[0]
    return float((lse - picked).mean())


def pixelwise_ce_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d mean-CE / d logits: (softmax - onehot) / (H*W)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    m = logits.max(axis=0)
    e = np.exp(logits - m)
    soft = e / e.sum(axis=0)
    k, h, w = logits.shape
    onehot = np.zeros_like(soft)
    np.put_along_axis(onehot, labels[None], 1.0, axis=0)
    return (soft - onehot) / (h * w)


def offset_residuals(pred: RegressionTarget, gt: RegressionTarget) -> list[float]:
    """Componentwise pred - gt; the angle component is scaled by 1/90."""
    out = [pred.tx - gt.tx, pred.ty - gt.ty, pred.tw - gt.tw, pred.th - gt.th]
    if (pred.ttheta is None) != (gt.ttheta is None):
        raise ValueError("mixed rotated/horizontal regression targets")
    if pred.ttheta is not None:
        out.append((pred.ttheta - gt.ttheta) * ANGLE_SCALE)
    return out


def smooth_l1_total(pred: RegressionTarget, gt: RegressionTarget, beta: float = 1.0) -> float:
    """Plain smooth-L1 regression loss summed over offset components."""
    total = 0.0
    for r in offset_residuals(pred, gt):
        total += smooth_l1(r, beta)
    return total


def iou_smooth_l1(
    v_pred: RegressionTarget,
    v_gt: RegressionTarget,
    anchor: RBox5,
    beta: float = 1.0,
) -> tuple[float, tuple[float, ...]]:
    """IoU-weighted rotated regression loss: (scalar value, gradient wrt v_pred).

    The value is |-log(IoU)| of the two decoded boxes (IoU clamped to
    [1e-6, 1]); the gradient keeps the smooth-L1 direction but is rescaled to
    that magnitude, treating both norms as constants under differentiation.
    """
    residuals = offset_residuals(v_pred, v_gt)
    reg = 0.0
    for r in residuals:
        reg += smooth_l1(r, beta)
    u = riou(decode(v_pred, anchor), decode(v_gt, anchor))
    u = min(max(u, IOU_CLAMP), 1.0)
    value = abs(-math.log(u))
    if reg == 0.0:
        if value == 0.0:
            return 0.0, (0.0,) * len(residuals)
        raise DegeneratePairError(
            f"zero regression residual but IoU {u:g} < 1; codec state is inconsistent"
        )
    scale = value / reg
    grad = []
    for j, r in enumerate(residuals):
        g = smooth_l1_grad(r, beta)
        if j == 4:
            g *= ANGLE_SCALE
        grad.append(g * scale)
    return value, tuple(grad)


def multitask_loss(
    batch: SampleBatch,
    mode: str = "horizontal",
    cfg: LossConfig = LossConfig(),
    inld_term: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Weighted sum of regression, classification and segmentation terms.

    Regression on positive anchors only, weighted by objectness; smooth L1
    in horizontal mode, the IoU-weighted variant in rotated mode.
    Classification is per-class focal loss over all anchors. The optional
    inld_term is (logits, labels) for pixel-wise CE.
    """
    if mode not in ("horizontal", "rotated"):
        raise ValueError(f"mode must be 'horizontal' or 'rotated', got {mode!r}")
    n = len(batch)
    if n == 0:
        raise EmptyBatchError("cannot average a loss over zero anchors")
    if mode == "rotated" and batch.anchors is None:
        raise ValueError("rotated mode needs batch.anchors to decode boxes")

    reg_sum = 0.0
    cls_sum = 0.0
    for i in range(n):
        label = batch.labels[i]
        if label > 0:
            if mode == "rotated":
                value, _ = iou_smooth_l1(
                    batch.pred_offsets[i], batch.target_offsets[i], batch.anchors[i], cfg.smooth_l1_beta
                )
            else:
                value = smooth_l1_total(batch.pred_offsets[i], batch.target_offsets[i], cfg.smooth_l1_beta)
            reg_sum += batch.objectness[i] * value
        for ci, p in enumerate(batch.class_probs[i]):
            cls_sum += focal_loss(p, 1 if label == ci + 1 else 0, cfg.focal_alpha, cfg.focal_gamma)

    total = cfg.lambda_reg / n * reg_sum + cfg.lambda_cls / n * cls_sum
    if inld_term is not None:
        logits, labels = inld_term
        total += cfg.lambda_inld * pixelwise_ce(logits, labels)
    return total


def loss_landscape(
    anchor: RBox5,
    gt: RBox5,
    start: float,
    stop: float,
    step: float,
    beta: float = 1.0,
) -> list[tuple[float, float, float, float]]:
    """Sweep the predicted angle with other parameters held at GT values.

    Each prediction is the physically-rotated box canonicalized before
    encoding, exactly as a detector's decoded output would be. Returns rows
    (theta_pred, smooth_l1_total, iou_smooth_value, riou).
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    v_gt = encode(gt, anchor)
    rows = []
    k = 0
    theta = start
    while theta <= stop + 1e-9:
        pred = canonicalize((gt.cx, gt.cy, gt.w, gt.h, theta))
        v_pred = encode(pred, anchor)
        sl1 = smooth_l1_total(v_pred, v_gt, beta)
        u = riou(pred, gt)
        iou_smooth = abs(-math.log(min(max(u, IOU_CLAMP), 1.0)))
        rows.append((theta, sl1, iou_smooth, u))
        k += 1
        theta = start + k * step
    return rows
