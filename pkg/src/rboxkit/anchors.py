"""Multi-level anchor generation and the box <-> offset regression codec.

Offsets follow the usual parametrization: center deltas normalized by the
anchor extents, log extent ratios, and (rotated mode only) a plain angle
difference in degrees, deliberately left unwrapped so the angular boundary
discontinuity stays observable downstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import HBox, RBox5, canonicalize
from .errors import DecodeOverflowError

# Decoded extents beyond this are treated as codec blow-ups, not boxes.
MAX_DECODE_EXTENT = 1e6

# RetinaNet-style pyramid defaults: P3..P7 strides with 32^2..512^2 areas,
# seven aspect ratios, three sub-octave scales, six anchor angles.
DEFAULT_LEVELS = ((8, 32.0**2), (16, 64.0**2), (32, 128.0**2), (64, 256.0**2), (128, 512.0**2))
DEFAULT_RATIOS = (1.0, 1 / 2, 2.0, 1 / 3, 3.0, 5.0, 1 / 5)
DEFAULT_SCALES = (2.0**0, 2.0 ** (1 / 3), 2.0 ** (2 / 3))
DEFAULT_ANGLES = (-90.0, -75.0, -60.0, -45.0, -30.0, -15.0)


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor layout: pyramid levels, shapes per cell, optional angles."""

    levels: tuple[tuple[int, float], ...] = DEFAULT_LEVELS
    aspect_ratios: tuple[float, ...] = DEFAULT_RATIOS
    scales: tuple[float, ...] = DEFAULT_SCALES
    angles: tuple[float, ...] = DEFAULT_ANGLES

    def __post_init__(self):
        if not self.aspect_ratios or not self.scales:
            raise ValueError("aspect_ratios and scales must be non-empty")
        strides = [s for s, _ in self.levels]
        if not strides or any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {strides}")
        if any(r <= 0 for r in self.aspect_ratios):
            raise ValueError("aspect ratios must be > 0")
        if any(s <= 0 for s in self.scales):
            raise ValueError("scales must be > 0")
        if any(not (-90.0 <= a < 0.0) for a in self.angles):
            raise ValueError("anchor angles must lie in [-90, 0)")

    def shapes(self, base_area: float) -> list[tuple[float, float]]:
        """(w, h) per (ratio, scale) combo with w*h = area*scale^2, w/h = ratio."""
        out = []
        for r in self.aspect_ratios:
            for s in self.scales:
                a = base_area * s * s
                out.append((math.sqrt(a * r), math.sqrt(a / r)))
        return out

    def anchors_per_cell(self, rotated: bool) -> int:
        n = len(self.aspect_ratios) * len(self.scales)
        return n * len(self.angles) if rotated else n


@dataclass(frozen=True)
class RegressionTarget:
    """Offset vector between a box and its anchor; ttheta in degrees (rotated only)."""

    tx: float
    ty: float
    tw: float
    th: float
    ttheta: float | None = None

    def astuple(self) -> tuple[float, ...]:
        if self.ttheta is None:
            return (self.tx, self.ty, self.tw, self.th)
        return (self.tx, self.ty, self.tw, self.th, self.ttheta)


def grid_shape(image_size: tuple[int, int], stride: int) -> tuple[int, int]:
    """(cols, rows) of the feature grid: ceil(image / stride)."""
    w, h = image_size
    if w <= 0 or h <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_size}")
    return (math.ceil(w / stride), math.ceil(h / stride))


def generate_anchor_array(
    spec: AnchorSpec, image_size: tuple[int, int], mode: str = "horizontal"
) -> tuple[np.ndarray, np.ndarray]:
    """All anchors as an (N, 5) array of (cx, cy, w, h, theta) plus level ids.

    Cell centers sit at half-stride offsets: (i + 0.5) * stride. Row order is
    level, then grid row, then grid column, then (ratio, scale[, angle]).
    Horizontal anchors carry theta = -90 in canonical form (w = y-extent).
    """
    rotated = _check_mode(mode)
    per_level = []
    level_ids = []
    for level, (stride, base_area) in enumerate(spec.levels):
        gw, gh = grid_shape(image_size, stride)
        shapes = spec.shapes(base_area)
        if rotated:
            combos = np.array([(w, h, a) for (w, h) in shapes for a in spec.angles])
        else:
            # Canonical axis-aligned form: swap so w is the vertical extent.
            combos = np.array([(h, w, -90.0) for (w, h) in shapes])
        cxs = (np.arange(gw) + 0.5) * stride
        cys = (np.arange(gh) + 0.5) * stride
        k = len(combos)
        block = np.empty((gh, gw, k, 5))
        block[..., 0] = cxs[None, :, None]
        block[..., 1] = cys[:, None, None]
        block[..., 2:5] = combos[None, None, :, :]
        per_level.append(block.reshape(-1, 5))
        level_ids.append(np.full(gh * gw * k, level, dtype=np.int64))
    return np.concatenate(per_level), np.concatenate(level_ids)


def generate_anchors(
    spec: AnchorSpec, image_size: tuple[int, int], mode: str = "horizontal"
) -> list[RBox5] | list[HBox]:
    """Anchor boxes as box objects; see generate_anchor_array for ordering."""
    rotated = _check_mode(mode)
    arr, _ = generate_anchor_array(spec, image_size, mode)
    if rotated:
        return [RBox5(*row) for row in arr]
    # Rows are canonical (theta=-90, w vertical); recover axis extents.
    return [
        HBox(cx - h / 2, cy - w / 2, cx + h / 2, cy + w / 2)
        for cx, cy, w, h, _ in arr
    ]


def _check_mode(mode: str) -> bool:
    if mode not in ("horizontal", "rotated"):
        raise ValueError(f"mode must be 'horizontal' or 'rotated', got {mode!r}")
    return mode == "rotated"


def _center_form(b: RBox5 | HBox) -> tuple[float, float, float, float]:
    if isinstance(b, HBox):
        return b.cx_w()
    return (b.cx, b.cy, b.w, b.h)


def encode(gt: RBox5 | HBox, anchor: RBox5 | HBox) -> RegressionTarget:
    """Offsets from anchor to gt; rotated boxes add an unwrapped angle delta."""
    x, y, w, h = _center_form(gt)
    xa, ya, wa, ha = _center_form(anchor)
    tx = (x - xa) / wa
    ty = (y - ya) / ha
    tw = math.log(w / wa)
    th = math.log(h / ha)
    if isinstance(gt, RBox5) and isinstance(anchor, RBox5):
        return RegressionTarget(tx, ty, tw, th, gt.theta - anchor.theta)
    if isinstance(gt, RBox5) != isinstance(anchor, RBox5):
        raise ValueError("gt and anchor must both be rotated or both horizontal")
    return RegressionTarget(tx, ty, tw, th)


def decode(t: RegressionTarget, anchor: RBox5 | HBox) -> RBox5 | HBox:
    """Exact inverse of encode; rotated output is canonicalized."""
    xa, ya, wa, ha = _center_form(anchor)
    try:
        w = wa * math.exp(t.tw)
        h = ha * math.exp(t.th)
    except OverflowError as exc:
        raise DecodeOverflowError(f"decoded extent overflows: {exc}") from exc
    if w > MAX_DECODE_EXTENT or h > MAX_DECODE_EXTENT:
        raise DecodeOverflowError(f"decoded extent beyond {MAX_DECODE_EXTENT:g} px: w={w:g} h={h:g}")
    x = t.tx * wa + xa
    y = t.ty * ha + ya
    if isinstance(anchor, RBox5):
        if t.ttheta is None:
            raise ValueError("rotated anchor needs a target with ttheta")
        return canonicalize((x, y, w, h, anchor.theta + t.ttheta))
    if t.ttheta is not None:
        raise ValueError("horizontal anchor cannot decode an angular target")
    return HBox(x - w / 2, y - h / 2, x + w / 2, y + h / 2)


def assign_anchors(
    anchors: Sequence,
    gts: Sequence,
    iou_fn,
    pos_threshold: float = 0.5,
    neg_threshold: float = 0.4,
) -> tuple[np.ndarray, np.ndarray]:
    """RetinaNet-style assignment: IoU >= pos is positive, < neg is negative.

    Returns (labels, matched): labels hold 1 / 0 / -1 for positive, negative
    and ignored anchors; matched holds the best-gt index (or -1).
    """
    if not 0 < neg_threshold <= pos_threshold:
        raise ValueError("need 0 < neg_threshold <= pos_threshold")
    labels = np.zeros(len(anchors), dtype=np.int64)
    matched = np.full(len(anchors), -1, dtype=np.int64)
    if not gts:
        return labels, matched
    for i, a in enumerate(anchors):
        ious = [iou_fn(a, g) for g in gts]
        best = max(range(len(gts)), key=lambda j: (ious[j], -j))
        if ious[best] >= pos_threshold:
            labels[i] = 1
            matched[i] = best
        elif ious[best] >= neg_threshold:
            labels[i] = -1
    return labels, matched
