"""Exact rotated-box overlap via convex polygon clipping, plus NMS.

Polygons are plain lists of (x, y) tuples in counter-clockwise order. The
clipping path is scalar float code on purpose: box-vs-box intersections have
at most 8 vertices and the per-pair cost is dominated by call overhead, not
array math.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

from .boxes import HBox, Point, RBox5, rbox_corners

# On-edge vertex classification tolerance; double precision at image scale
# keeps >= 6 safe digits, so 1e-9 px is deep inside the noise floor.
CLIP_EPS = 1e-9


def convex_clip(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Sutherland-Hodgman intersection of two convex CCW polygons.

    Returns the intersection polygon (CCW, possibly empty). Duplicate
    consecutive vertices within CLIP_EPS are merged.
    """
    output = list(subject)
    n_clip = len(clip)
    for i in range(n_clip):
        if not output:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n_clip]
        ex, ey = bx - ax, by - ay
        input_list = output
        output = []
        sx, sy = input_list[-1]
        s_in = ex * (sy - ay) - ey * (sx - ax) >= -CLIP_EPS
        for px, py in input_list:
            p_in = ex * (py - ay) - ey * (px - ax) >= -CLIP_EPS
            if p_in != s_in:
                # Edge crossing: intersect segment (s, p) with the clip line.
                dx, dy = px - sx, py - sy
                denom = ex * dy - ey * dx
                if denom != 0.0:
                    t = (ex * (ay - sy) - ey * (ax - sx)) / denom
                    output.append((sx + t * dx, sy + t * dy))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
    return _dedupe(output)


def _dedupe(poly: list[Point]) -> list[Point]:
    if not poly:
        return poly
    out: list[Point] = []
    for p in poly:
        if not out or abs(p[0] - out[-1][0]) > CLIP_EPS or abs(p[1] - out[-1][1]) > CLIP_EPS:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= CLIP_EPS and abs(out[0][1] - out[-1][1]) <= CLIP_EPS:
        out.pop()
    return out


def polygon_area(poly: Sequence[Point]) -> float:
    """Shoelace area, always >= 0."""
    n = len(poly)
    if n < 3:
        return 0.0
    total = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return abs(total) * 0.5


def riou(a: RBox5, b: RBox5) -> float:
    """Rotated IoU in [0, 1]. Edge contact without overlap area counts as 0.

    The pair is ordered internally, so riou(a, b) and riou(b, a) run the
    same computation and agree exactly.
    """
    if a.astuple() == b.astuple():
        return 1.0
    if b.astuple() < a.astuple():
        a, b = b, a
    ca = rbox_corners(a)
    cb = rbox_corners(b)
    # Cheap reject: disjoint axis-aligned hulls cannot intersect.
    if (
        max(p[0] for p in ca) < min(p[0] for p in cb)
        or max(p[0] for p in cb) < min(p[0] for p in ca)
        or max(p[1] for p in ca) < min(p[1] for p in cb)
        or max(p[1] for p in cb) < min(p[1] for p in ca)
    ):
        return 0.0
    inter = polygon_area(convex_clip(ca, cb))
    if inter <= 0.0:
        return 0.0
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0.0:
        return 0.0
    out = inter / union
    if out < 0.0:
        return 0.0
    if out > 1.0:
        return 1.0
    return out


def hiou(a: HBox, b: HBox) -> float:
    """Axis-aligned IoU in [0, 1]."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    out = inter / union
    if out < 0.0:
        return 0.0
    if out > 1.0:
        return 1.0
    return out


def nms_indices(
    n: int,
    scores: Sequence[float],
    iou_threshold: float,
    pair_iou: Callable[[int, int], float],
) -> list[int]:
    """Greedy descending-score suppression over n items.

    Score ties break toward the lower input index. A candidate is suppressed
    when its IoU with an already kept item exceeds (strictly) the threshold.
    """
    if len(scores) != n:
        raise ValueError(f"expected {n} scores, got {len(scores)}")
    for s in scores:
        if not math.isfinite(s):
            raise ValueError(f"non-finite score {s!r}")
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(pair_iou(i, j) <= iou_threshold for j in kept):
            kept.append(i)
    return kept


def rnms(boxes: Sequence[RBox5], scores: Sequence[float], iou_threshold: float) -> list[int]:
    """Rotated NMS; returns kept indices in descending score order."""
    if len(boxes) != len(scores):
        raise ValueError(f"{len(boxes)} boxes vs {len(scores)} scores")
    return nms_indices(len(boxes), scores, iou_threshold, lambda i, j: riou(boxes[i], boxes[j]))


def hnms(boxes: Sequence[HBox], scores: Sequence[float], iou_threshold: float) -> list[int]:
    """Horizontal NMS; same contract as rnms on axis-aligned boxes."""
    if len(boxes) != len(scores):
        raise ValueError(f"{len(boxes)} boxes vs {len(scores)} scores")
    return nms_indices(len(boxes), scores, iou_threshold, lambda i, j: hiou(boxes[i], boxes[j]))
