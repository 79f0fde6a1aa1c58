"""Rotated-box types and conversions in the OpenCV angle convention.

A rotated box is (cx, cy, w, h, theta) with theta in degrees. theta is the
angle from the x-axis to the side named w; the canonical range is [-90, 0),
so an axis-aligned box has theta = -90 with w equal to its vertical extent.
Shifting theta by +-90 while swapping w and h leaves the point set unchanged,
which is exactly the ambiguity canonicalize() resolves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidBoxError

# Extents below this are rejected as data errors instead of being clamped.
MIN_EXTENT = 1e-6

Point = tuple[float, float]


def _check_extent(name: str, v: float) -> None:
    if not math.isfinite(v):
        raise InvalidBoxError(f"{name} is not finite: {v!r}")
    if v <= MIN_EXTENT:
        raise InvalidBoxError(f"{name} must exceed {MIN_EXTENT} px, got {v!r}")


@dataclass(frozen=True)
class RBox5:
    """5-parameter rotated box. Canonical boxes have theta in [-90, 0)."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        for name in ("cx", "cy", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidBoxError(f"{name} is not finite: {v!r}")
        _check_extent("w", self.w)
        _check_extent("h", self.h)

    @property
    def is_canonical(self) -> bool:
        return -90.0 <= self.theta < 0.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def astuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h, self.theta)


@dataclass(frozen=True)
class Quad:
    """4-vertex quadrilateral, vertex order as given (DOTA native form)."""

    vertices: tuple[Point, Point, Point, Point]

    def __post_init__(self):
        if len(self.vertices) != 4:
            raise InvalidBoxError(f"quad needs 4 vertices, got {len(self.vertices)}")
        for x, y in self.vertices:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InvalidBoxError(f"non-finite vertex ({x!r}, {y!r})")

    @property
    def signed_area(self) -> float:
        return _signed_area(self.vertices)

    def canonical(self) -> "Quad":
        """Counter-clockwise order, starting at the lexicographically smallest vertex."""
        verts = list(self.vertices)
        if _signed_area(verts) < 0:
            verts.reverse()
        start = min(range(4), key=lambda i: verts[i])
        return Quad(tuple(verts[start:] + verts[:start]))


@dataclass(frozen=True)
class HBox:
    """Axis-aligned box as (xmin, ymin, xmax, ymax)."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        for name in ("xmin", "ymin", "xmax", "ymax"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidBoxError(f"{name} is not finite")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise InvalidBoxError("empty horizontal box: min must be < max on both axes")

    def cx_w(self) -> tuple[float, float, float, float]:
        """Center form (cx, cy, w, h)."""
        return (
            (self.xmin + self.xmax) * 0.5,
            (self.ymin + self.ymax) * 0.5,
            self.xmax - self.xmin,
            self.ymax - self.ymin,
        )

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)


def _signed_area(verts: Sequence[Point]) -> float:
    total = 0.0
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def canonicalize(box: RBox5 | Iterable[float]) -> RBox5:
    """Normalize theta into [-90, 0), swapping w and h per 90-degree shift.

    The returned box denotes the same point set as the input. Rejects
    non-finite fields and non-positive extents.
    """
    if not isinstance(box, RBox5):
        box = RBox5(*box)
    cx, cy, w, h, theta = box.astuple()
    # Side directions have period 180; reduce into [-90, 90) first.
    reduced = theta - 180.0 * math.floor((theta + 90.0) / 180.0)
    if reduced >= 0.0:
        return RBox5(cx, cy, h, w, reduced - 90.0)
    if box.theta == reduced:
        return box
    return RBox5(cx, cy, w, h, reduced)


def rbox_corners(b: RBox5) -> list[Point]:
    """Corners in counter-clockwise order; works for any finite theta."""
    rad = math.radians(b.theta)
    c = math.cos(rad)
    s = math.sin(rad)
    wx = c * (b.w * 0.5)
    wy = s * (b.w * 0.5)
    hx = -s * (b.h * 0.5)
    hy = c * (b.h * 0.5)
    return [
        (b.cx - wx - hx, b.cy - wy - hy),
        (b.cx + wx - hx, b.cy + wy - hy),
        (b.cx + wx + hx, b.cy + wy + hy),
        (b.cx - wx + hx, b.cy - wy + hy),
    ]


def rbox_to_quad(b: RBox5) -> Quad:
    """Expand a rotated box to its 4 corners (CCW)."""
    return Quad(tuple(rbox_corners(b)))


def _convex_hull(points: Sequence[Point]) -> list[Point]:
    """Monotone chain; returns CCW hull without the repeated endpoint."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def quad_to_rbox(q: Quad) -> RBox5:
    """Minimum-area enclosing rotated rectangle of the quad, canonicalized.

    Scans every hull edge orientation (the optimum is always edge-aligned)
    and breaks area ties by the smallest |theta| of the canonical result.
    """
    hull = _convex_hull(q.vertices)
    if len(hull) < 3 or abs(_signed_area(hull)) < MIN_EXTENT * MIN_EXTENT:
        raise InvalidBoxError("degenerate quad: zero-area convex hull")

    best: RBox5 | None = None
    best_area = math.inf
    n = len(hull)
    for i in range(n):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % n]
        ex, ey = x1 - x0, y1 - y0
        norm = math.hypot(ex, ey)
        if norm < MIN_EXTENT:
            continue
        ux, uy = ex / norm, ey / norm
        # Project hull points onto the edge direction and its normal.
        us = [p[0] * ux + p[1] * uy for p in hull]
        vs = [-p[0] * uy + p[1] * ux for p in hull]
        ulo, uhi = min(us), max(us)
        vlo, vhi = min(vs), max(vs)
        area = (uhi - ulo) * (vhi - vlo)
        if area > best_area * (1.0 + 1e-9):
            continue
        uc = (ulo + uhi) * 0.5
        vc = (vlo + vhi) * 0.5
        cand = canonicalize(
            (
                uc * ux - vc * uy,
                uc * uy + vc * ux,
                uhi - ulo,
                vhi - vlo,
                math.degrees(math.atan2(uy, ux)),
            )
        )
        if area < best_area * (1.0 - 1e-9) or best is None:
            best, best_area = cand, area
        elif abs(cand.theta) < abs(best.theta):
            best = cand
    assert best is not None
    return best


def rbox_to_hbox(b: RBox5) -> HBox:
    """Axis-aligned bounding box of the rotated box's corners."""
    xs, ys = zip(*rbox_corners(b))
    return HBox(min(xs), min(ys), max(xs), max(ys))


def quad_to_hbox(q: Quad) -> HBox:
    """Axis-aligned bounding box of a quadrilateral."""
    xs, ys = zip(*q.vertices)
    return HBox(min(xs), min(ys), max(xs), max(ys))
