"""DOTA-format annotation parsing, image tiling, detection remapping/merging,
and submission-file output.

Large aerial images are split into fixed windows (default 600 px with 150 px
overlap, each rescaled to 800 px); detections made on tiles are mapped back
to global coordinates and fused with per-category rotated NMS.
"""
from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .boxes import Quad, RBox5, canonicalize, quad_to_rbox, rbox_corners, rbox_to_hbox
from .errors import AnnotationParseError
from .geometry import convex_clip, polygon_area, rnms

DEFAULT_WINDOW = 600
DEFAULT_OVERLAP = 150
DEFAULT_OUT_SIZE = 800

# Annotation header keys that DOTA files may carry before data lines.
_HEADER_PREFIXES = ("imagesource", "gsd")


@dataclass(frozen=True)
class Annotation:
    quad: Quad
    category: str
    difficult: int = 0


@dataclass(frozen=True)
class TilePlan:
    window: int
    overlap: int
    out_size: int
    tiles: tuple[tuple[int, int, float], ...]  # (origin_x, origin_y, scale)


@dataclass(frozen=True)
class Detection:
    image_id: str
    category: str
    score: float
    box: RBox5

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be finite in [0, 1], got {self.score!r}")


def parse_dota(text: str) -> list[Annotation]:
    """Parse DOTA annotation text: x1 y1 x2 y2 x3 y3 x4 y4 category difficult.

    Metadata header lines (imagesource/gsd) and blank lines are skipped.
    Raises AnnotationParseError with the offending 1-based line number.
    """
    out = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.lower().startswith(_HEADER_PREFIXES):
            continue
        fields = line.split()
        if len(fields) < 10:
            raise AnnotationParseError(line_no, f"expected >= 10 fields, got {len(fields)}")
        try:
            coords = [float(v) for v in fields[:8]]
        except ValueError as exc:
            raise AnnotationParseError(line_no, f"bad coordinate: {exc}") from exc
        category = " ".join(fields[8:-1])
        if not category:
            raise AnnotationParseError(line_no, "empty category")
        try:
            difficult = 1 if int(fields[-1]) != 0 else 0
        except ValueError as exc:
            raise AnnotationParseError(line_no, f"bad difficult flag {fields[-1]!r}") from exc
        quad = Quad(tuple((coords[i], coords[i + 1]) for i in range(0, 8, 2)))
        out.append(Annotation(quad, category, difficult))
    return out


def load_dota_file(path: str) -> list[Annotation]:
    with open(path, encoding="utf-8") as fh:
        return parse_dota(fh.read())


def _axis_origins(extent: int, window: int, stride: int) -> list[int]:
    """Stride-multiple origins; the last is shifted back to touch the edge."""
    origins = []
    x = 0
    while x + window < extent:
        origins.append(x)
        x += stride
    last = max(extent - window, 0)
    if not origins or origins[-1] != last:
        origins.append(last)
    return origins


def plan_tiles(
    image_size: tuple[int, int],
    window: int = DEFAULT_WINDOW,
    overlap: int = DEFAULT_OVERLAP,
    out_size: int = DEFAULT_OUT_SIZE,
) -> TilePlan:
    """Overlapping tile windows covering the whole image.

    Origins advance by (window - overlap); a window that would overrun the
    image is shifted back to end exactly at the border. Images smaller than
    the window yield the single origin (0, 0). scale = out_size / window.
    """
    w, h = image_size
    if w < 1 or h < 1:
        raise ValueError(f"image size must be positive, got {image_size}")
    if not 0 <= overlap < window:
        raise ValueError(f"need 0 <= overlap < window, got overlap={overlap} window={window}")
    if out_size < 1:
        raise ValueError("out_size must be positive")
    stride = window - overlap
    scale = out_size / window
    tiles = tuple(
        (ox, oy, scale) for oy in _axis_origins(h, window, stride) for ox in _axis_origins(w, window, stride)
    )
    return TilePlan(window, overlap, out_size, tiles)


def remap_detection(det: Detection, origin: tuple[float, float], scale: float) -> Detection:
    """Tile coordinates -> global: divide by scale, translate by the origin."""
    if scale <= 0:
        raise ValueError("scale must be > 0")
    b = det.box
    box = RBox5(b.cx / scale + origin[0], b.cy / scale + origin[1], b.w / scale, b.h / scale, b.theta)
    return replace(det, box=box)


def clip_annotations(
    annotations: Sequence[Annotation],
    origin: tuple[float, float],
    window: int,
    scale: float = 1.0,
    keep_fraction: float = 0.5,
) -> list[Annotation]:
    """Annotations falling in a tile window, in tile coordinates.

    An annotation is kept when at least keep_fraction of its area lies inside
    the window; the box itself is not geometrically clipped, only remapped.
    """
    ox, oy = origin
    rect = [(ox, oy), (ox + window, oy), (ox + window, oy + window), (ox, oy + window)]
    out = []
    for ann in annotations:
        verts = ann.quad.canonical().vertices
        full = polygon_area(list(verts))
        if full <= 0:
            continue
        inside = polygon_area(convex_clip(list(verts), rect))
        if inside / full < keep_fraction:
            continue
        moved = Quad(tuple(((x - ox) * scale, (y - oy) * scale) for x, y in ann.quad.vertices))
        out.append(replace(ann, quad=moved))
    return out


def merge_detections(per_tile: Iterable[Sequence[Detection]], nms_threshold: float = 0.3) -> list[Detection]:
    """Fuse per-tile detections (already in global coordinates) with
    per-image, per-category rotated NMS; output sorted by descending score."""
    groups: dict[tuple[str, str], list[Detection]] = defaultdict(list)
    for dets in per_tile:
        for det in dets:
            groups[(det.image_id, det.category)].append(det)
    merged = []
    for key in sorted(groups):
        dets = groups[key]
        keep = rnms([d.box for d in dets], [d.score for d in dets], nms_threshold)
        merged.extend(dets[i] for i in keep)
    merged.sort(key=lambda d: -d.score)
    return merged


def _submission_name(task: str, category: str) -> str:
    prefix = {"obb": "Task1", "hbb": "Task2"}.get(task)
    if prefix is None:
        raise ValueError(f"task must be 'obb' or 'hbb', got {task!r}")
    return f"{prefix}_{category}.txt"


def write_submission(
    dets: Sequence[Detection],
    task: str,
    out_dir: str,
    categories: Sequence[str] | None = None,
) -> list[str]:
    """One Task1_<cat>.txt (OBB corners) or Task2_<cat>.txt (HBB extents) per
    category. Returns the written paths. Categories default to those present
    in dets; pass them explicitly to also emit empty files."""
    if categories is None:
        categories = sorted({d.category for d in dets})
    by_cat: dict[str, list[Detection]] = {c: [] for c in categories}
    for det in dets:
        if det.category not in by_cat:
            raise ValueError(f"detection category {det.category!r} not in {sorted(by_cat)}")
        by_cat[det.category].append(det)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for cat in categories:
        path = os.path.join(out_dir, _submission_name(task, cat))
        with open(path, "w", encoding="utf-8") as fh:
            for det in by_cat[cat]:
                if task == "obb":
                    coords = [v for corner in rbox_corners(det.box) for v in corner]
                else:
                    hb = rbox_to_hbox(det.box)
                    coords = [hb.xmin, hb.ymin, hb.xmax, hb.ymax]
                coord_text = " ".join(f"{v:.6f}" for v in coords)
                fh.write(f"{det.image_id} {det.score:.6f} {coord_text}\n")
        paths.append(path)
    return paths


def parse_submission_line(line: str, task: str, line_no: int) -> tuple[str, float, RBox5]:
    fields = line.split()
    want = 10 if task == "obb" else 6
    if len(fields) != want:
        raise AnnotationParseError(line_no, f"expected {want} fields for {task}, got {len(fields)}")
    image_id = fields[0]
    try:
        score = float(fields[1])
        coords = [float(v) for v in fields[2:]]
    except ValueError as exc:
        raise AnnotationParseError(line_no, f"bad number: {exc}") from exc
    if task == "obb":
        quad = Quad(tuple((coords[i], coords[i + 1]) for i in range(0, 8, 2)))
        box = quad_to_rbox(quad)
    else:
        xmin, ymin, xmax, ymax = coords
        box = canonicalize(((xmin + xmax) / 2, (ymin + ymax) / 2, xmax - xmin, ymax - ymin, 0.0))
    return image_id, score, box


def read_submission_dir(dets_dir: str, task: str) -> dict[str, list[Detection]]:
    """Load Task1_/Task2_ submission files into per-category detection lists."""
    prefix = {"obb": "Task1_", "hbb": "Task2_"}[task]
    out: dict[str, list[Detection]] = {}
    for name in sorted(os.listdir(dets_dir)):
        if not (name.startswith(prefix) and name.endswith(".txt")):
            continue
        category = name[len(prefix) : -len(".txt")]
        dets = []
        with open(os.path.join(dets_dir, name), encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                image_id, score, box = parse_submission_line(line, task, line_no)
                dets.append(Detection(image_id, category, score, box))
        out[category] = dets
    return out
