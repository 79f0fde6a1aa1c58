"""VOC-style average precision for rotated (OBB) and horizontal (HBB) tasks.

Detections are matched per image, greedily in descending score order, to the
highest-IoU unmatched non-difficult ground truth at or above the threshold.
A detection whose only qualifying matches are difficult ground truths is
ignored (neither TP nor FP) when difficult handling is on.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .boxes import RBox5, rbox_to_hbox
from .dota import Detection
from .geometry import hiou, riou

logger = logging.getLogger(__name__)

METRICS = ("voc07_11point", "all_point")

IouFn = Callable[[RBox5, RBox5], float]


def obb_iou(a: RBox5, b: RBox5) -> float:
    return riou(a, b)


def hbb_iou(a: RBox5, b: RBox5) -> float:
    return hiou(rbox_to_hbox(a), rbox_to_hbox(b))


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    category: str
    box: RBox5
    difficult: int = 0


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    metric: str = "voc07_11point"
    ignore_difficult: bool = True

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1), got {self.iou_threshold}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")


def _match_one(
    det: Detection,
    gts: Sequence[GroundTruth],
    taken: list[bool],
    iou_fn: IouFn,
    threshold: float,
    ignore_difficult: bool,
) -> str:
    """Flag one detection and mark the ground truth it consumes, if any.

    IoU ties between candidate ground truths break toward the lower index.
    """
    best_j = -1
    best_iou = -1.0
    difficult_hit = False
    for j, gt in enumerate(gts):
        ov = iou_fn(det.box, gt.box)
        if ov < threshold:
            continue
        if ignore_difficult and gt.difficult:
            difficult_hit = True
            continue
        if taken[j]:
            continue
        if ov > best_iou:
            best_iou = ov
            best_j = j
    if best_j >= 0:
        taken[best_j] = True
        return "tp"
    return "ignore" if difficult_hit else "fp"


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_fn: IouFn,
    threshold: float,
    ignore_difficult: bool = True,
) -> list[str]:
    """Per-detection flags 'tp' / 'fp' / 'ignore' for one image and category.

    dets must already be sorted by descending score; each ground truth is
    matched at most once.
    """
    taken = [False] * len(gts)
    return [_match_one(d, gts, taken, iou_fn, threshold, ignore_difficult) for d in dets]


def average_precision(flags: Sequence[str], num_gt: int, metric: str = "voc07_11point") -> float:
    """AP from ordered TP/FP flags ('ignore' entries are dropped).

    voc07_11point: mean over recall thresholds {0, 0.1, ..., 1} of the best
    precision at recall >= t. all_point: area under the interpolated
    (monotone-envelope) precision-recall curve.
    """
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    counted = [f for f in flags if f != "ignore"]
    if num_gt == 0:
        if counted:
            logger.warning("AP over 0 ground truths with %d detections: defined as 0", len(counted))
        return 0.0
    if not counted:
        return 0.0
    recalls = []
    precisions = []
    tp = fp = 0
    for f in counted:
        if f == "tp":
            tp += 1
        else:
            fp += 1
        recalls.append(tp / num_gt)
        precisions.append(tp / (tp + fp))
    if metric == "voc07_11point":
        total = 0.0
        for t in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0):
            best = max((p for r, p in zip(recalls, precisions) if r >= t - 1e-12), default=0.0)
            total += best
        return total / 11.0
    # All-point: monotone precision envelope, summed over recall increments.
    mrec = [0.0] + recalls + [1.0]
    mpre = [0.0] + precisions + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        if mrec[i] != mrec[i - 1]:
            ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return ap


@dataclass(frozen=True)
class CategoryResult:
    ap: float
    num_gt: int
    num_det: int


@dataclass(frozen=True)
class EvalReport:
    per_category: Mapping[str, CategoryResult]
    mean_ap: float
    categories_in_mean: tuple[str, ...] = ()


def map_report(
    dets_by_category: Mapping[str, Sequence[Detection]],
    gts_by_category: Mapping[str, Sequence[GroundTruth]],
    cfg: EvalConfig = EvalConfig(),
    iou_fn: IouFn = obb_iou,
) -> EvalReport:
    """Per-category AP plus the unweighted mean over categories with >= 1 GT."""
    categories = sorted(set(dets_by_category) | set(gts_by_category))
    results = {}
    in_mean = []
    for cat in categories:
        dets = sorted(dets_by_category.get(cat, ()), key=lambda d: -d.score)
        gts = list(gts_by_category.get(cat, ()))
        per_image: dict[str, list[GroundTruth]] = {}
        for gt in gts:
            per_image.setdefault(gt.image_id, []).append(gt)
        taken = {k: [False] * len(v) for k, v in per_image.items()}
        flags = [
            _match_one(
                det,
                per_image.get(det.image_id, []),
                taken.get(det.image_id, []),
                iou_fn,
                cfg.iou_threshold,
                cfg.ignore_difficult,
            )
            for det in dets
        ]
        num_gt = sum(1 for g in gts if not (cfg.ignore_difficult and g.difficult))
        results[cat] = CategoryResult(average_precision(flags, num_gt, cfg.metric), num_gt, len(dets))
        if num_gt > 0:
            in_mean.append(cat)
    mean_ap = sum(results[c].ap for c in in_mean) / len(in_mean) if in_mean else 0.0
    return EvalReport(results, mean_ap, tuple(in_mean))
