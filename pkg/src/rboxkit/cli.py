"""Command-line surface: iou, nms, anchors, tile, merge, eval,
loss-landscape and denoise-demo subcommands.

Exit codes: 0 success, 1 usage error, 2 data error. A key=value config file
(--config) fills in flag values; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from typing import Sequence

import numpy as np

from . import anchors as anchors_mod
from . import denoise, dota, evaluation, losses
from .boxes import Quad, RBox5, canonicalize, quad_to_rbox
from .errors import RBoxKitError
from .geometry import riou, rnms


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _parse_box(text: str) -> RBox5:
    parts = text.split(",")
    if len(parts) != 5:
        raise UsageError(f"box must be 'cx,cy,w,h,theta', got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"bad box value: {exc}") from exc
    return canonicalize(vals)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise UsageError(f"size must be WxH, got {text!r}") from exc


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(",") if p)
    except ValueError as exc:
        raise UsageError(f"bad numeric list {text!r}: {exc}") from exc


def _out_stream(path: str | None):
    return open(path, "w", encoding="utf-8", newline="") if path else sys.stdout


def build_parser() -> _Parser:
    parser = _Parser(prog="rboxkit", description="Rotated-box detection toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key=value file; flags override it")
        return p

    p = add("iou", "rotated IoU of two boxes")
    p.add_argument("--a", required=True, help="cx,cy,w,h,theta")
    p.add_argument("--b", required=True, help="cx,cy,w,h,theta")

    p = add("nms", "rotated NMS over a CSV of cx,cy,w,h,theta,score rows")
    p.add_argument("--boxes", required=True, help="input CSV path")
    p.add_argument("--thresh", type=float, default=0.3)

    p = add("anchors", "dump anchors as CSV: level,cx,cy,w,h,theta")
    p.add_argument("--image-size", type=_parse_size, default=(800, 800))
    p.add_argument("--mode", choices=("horizontal", "rotated"), default="horizontal")
    p.add_argument("--ratios", type=_float_list, default=anchors_mod.DEFAULT_RATIOS)
    p.add_argument("--scales", type=_float_list, default=anchors_mod.DEFAULT_SCALES)
    p.add_argument("--angles", type=_float_list, default=anchors_mod.DEFAULT_ANGLES)
    p.add_argument("--output", default=None)

    p = add("tile", "plan overlapping tiles; optionally split an annotation file")
    p.add_argument("--image-size", type=_parse_size, required=True)
    p.add_argument("--window", type=int, default=dota.DEFAULT_WINDOW)
    p.add_argument("--overlap", type=int, default=dota.DEFAULT_OVERLAP)
    p.add_argument("--out-size", type=int, default=dota.DEFAULT_OUT_SIZE)
    p.add_argument("--annotations", default=None, help="DOTA annotation file to split per tile")
    p.add_argument("--out-dir", default=None, help="directory for per-tile annotation files")
    p.add_argument("--keep-frac", type=float, default=0.5)
    p.add_argument("--output", default=None)

    p = add("merge", "remap per-tile detections to global coords and fuse with NMS")
    p.add_argument("--dets", required=True, help="CSV: image_id,category,score,cx,cy,w,h,theta[,origin_x,origin_y,scale]")
    p.add_argument("--nms-thresh", type=float, default=0.3)
    p.add_argument("--output", default=None)

    p = add("eval", "VOC-style mAP of submission files against DOTA ground truth")
    p.add_argument("--task", choices=("obb", "hbb"), required=True)
    p.add_argument("--gt", required=True, help="directory of <image_id>.txt DOTA files")
    p.add_argument("--dets", required=True, help="directory of Task1_/Task2_ submission files")
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--metric", choices=evaluation.METRICS, default="voc07_11point")
    p.add_argument("--difficult", choices=("ignore", "count"), default="ignore")
    p.add_argument("--csv", default=None, help="also write the per-category table as CSV")

    p = add("loss-landscape", "CSV sweep of regression losses across predicted angles")
    p.add_argument("--anchor", required=True, help="cx,cy,w,h,theta")
    p.add_argument("--gt", required=True, help="cx,cy,w,h,theta")
    p.add_argument("--start", type=float, required=True)
    p.add_argument("--stop", type=float, required=True)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--output", default=None)

    p = add("denoise-demo", "deterministic instance/image-level denoising walkthrough")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--size", type=_parse_size, default=(16, 16))
    p.add_argument("--filter", choices=denoise.IMLD_FILTERS, default="nonlocal_gaussian")
    p.add_argument("--output", default=None, help="write the denoised map as a .fmap binary")

    return parser


def _apply_config(parser: _Parser, args: argparse.Namespace, argv: Sequence[str]) -> argparse.Namespace:
    """Re-parse with config-file values as defaults so explicit flags win."""
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from exc
    known = {k.replace("_", "-"): k for k in vars(args) if k not in ("command", "config")}
    overrides = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if key not in known:
            raise UsageError(f"config line {line_no}: unknown key {key!r}")
        overrides[known[key]] = value.strip()
    if not overrides:
        return args
    # Convert strings through each option's registered type.
    sub_parser = None
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        sub_parser = action.choices[args.command]
    typed = {}
    for action in sub_parser._actions:  # noqa: SLF001
        if action.dest in overrides:
            raw_value = overrides[action.dest]
            typed[action.dest] = action.type(raw_value) if action.type else raw_value
    sub_parser.set_defaults(**typed)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        args = _apply_config(parser, args, argv)
        _COMMANDS[args.command](args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (RBoxKitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _cmd_iou(args) -> None:
    print(f"{riou(_parse_box(args.a), _parse_box(args.b)):.6f}")


def _cmd_nms(args) -> None:
    boxes = []
    scores = []
    with open(args.boxes, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line.lower().startswith("cx"):
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"line {line_no}: expected cx,cy,w,h,theta,score")
            vals = [float(p) for p in parts]
            boxes.append(canonicalize(vals[:5]))
            scores.append(vals[5])
    for idx in rnms(boxes, scores, args.thresh):
        print(idx)


def _cmd_anchors(args) -> None:
    spec = anchors_mod.AnchorSpec(
        aspect_ratios=args.ratios, scales=args.scales, angles=args.angles or anchors_mod.DEFAULT_ANGLES
    )
    arr, levels = anchors_mod.generate_anchor_array(spec, args.image_size, args.mode)
    out = _out_stream(args.output)
    try:
        writer = csv.writer(out)
        writer.writerow(["level", "cx", "cy", "w", "h", "theta"])
        for lvl, row in zip(levels, arr):
            writer.writerow([int(lvl)] + [f"{v:.4f}" for v in row])
    finally:
        if out is not sys.stdout:
            out.close()


def _cmd_tile(args) -> None:
    plan = dota.plan_tiles(args.image_size, args.window, args.overlap, args.out_size)
    out = _out_stream(args.output)
    try:
        writer = csv.writer(out)
        writer.writerow(["origin_x", "origin_y", "scale"])
        for ox, oy, scale in plan.tiles:
            writer.writerow([ox, oy, f"{scale:.6f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    if args.annotations:
        if not args.out_dir:
            raise UsageError("--annotations requires --out-dir")
        annos = dota.load_dota_file(args.annotations)
        os.makedirs(args.out_dir, exist_ok=True)
        stem = os.path.splitext(os.path.basename(args.annotations))[0]
        for ox, oy, scale in plan.tiles:
            kept = dota.clip_annotations(annos, (ox, oy), args.window, scale, args.keep_frac)
            path = os.path.join(args.out_dir, f"{stem}__{ox}_{oy}.txt")
            with open(path, "w", encoding="utf-8") as fh:
                for ann in kept:
                    coords = " ".join(f"{v:.2f}" for xy in ann.quad.vertices for v in xy)
                    fh.write(f"{coords} {ann.category} {ann.difficult}\n")


def _cmd_merge(args) -> None:
    dets = []
    with open(args.dets, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line.lower().startswith("image_id"):
                continue
            parts = line.split(",")
            if len(parts) not in (8, 11):
                raise ValueError(f"line {line_no}: expected 8 or 11 fields, got {len(parts)}")
            image_id, category = parts[0], parts[1]
            score = float(parts[2])
            box = canonicalize([float(v) for v in parts[3:8]])
            det = dota.Detection(image_id, category, score, box)
            if len(parts) == 11:
                origin = (float(parts[8]), float(parts[9]))
                det = dota.remap_detection(det, origin, float(parts[10]))
            dets.append(det)
    merged = dota.merge_detections([dets], args.nms_thresh)
    out = _out_stream(args.output)
    try:
        writer = csv.writer(out)
        writer.writerow(["image_id", "category", "score", "cx", "cy", "w", "h", "theta"])
        for d in merged:
            writer.writerow(
                [d.image_id, d.category, f"{d.score:.6f}"] + [f"{v:.4f}" for v in d.box.astuple()]
            )
    finally:
        if out is not sys.stdout:
            out.close()


def _load_gt_dir(gt_dir: str) -> dict[str, list[evaluation.GroundTruth]]:
    gts: dict[str, list[evaluation.GroundTruth]] = {}
    for name in sorted(os.listdir(gt_dir)):
        if not name.endswith(".txt"):
            continue
        image_id = name[: -len(".txt")]
        for ann in dota.load_dota_file(os.path.join(gt_dir, name)):
            gt = evaluation.GroundTruth(image_id, ann.category, quad_to_rbox(ann.quad), ann.difficult)
            gts.setdefault(ann.category, []).append(gt)
    return gts


def _cmd_eval(args) -> None:
    cfg = evaluation.EvalConfig(args.iou_thresh, args.metric, args.difficult == "ignore")
    gts = _load_gt_dir(args.gt)
    dets = dota.read_submission_dir(args.dets, args.task)
    iou_fn = evaluation.obb_iou if args.task == "obb" else evaluation.hbb_iou
    report = evaluation.map_report(dets, gts, cfg, iou_fn)
    table = io.StringIO()
    writer = csv.writer(table)
    writer.writerow(["category", "ap", "num_gt", "num_det"])
    for cat in sorted(report.per_category):
        r = report.per_category[cat]
        writer.writerow([cat, f"{r.ap:.6f}", r.num_gt, r.num_det])
    writer.writerow(["mAP", f"{report.mean_ap:.6f}", "", ""])
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(table.getvalue())
    width = max([len("category")] + [len(c) for c in report.per_category])
    print(f"{'category':<{width}}  {'AP':>8}  {'#gt':>6}  {'#det':>6}")
    for cat in sorted(report.per_category):
        r = report.per_category[cat]
        print(f"{cat:<{width}}  {r.ap:8.4f}  {r.num_gt:6d}  {r.num_det:6d}")
    print(f"{'mAP':<{width}}  {report.mean_ap:8.4f}")


def _cmd_loss_landscape(args) -> None:
    rows = losses.loss_landscape(
        _parse_box(args.anchor), _parse_box(args.gt), args.start, args.stop, args.step, args.beta
    )
    out = _out_stream(args.output)
    try:
        out.write("theta_pred,smooth_l1,iou_smooth,riou\n")
        for theta, sl1, ism, u in rows:
            out.write(f"{theta:.6f},{sl1:.9f},{ism:.9f},{u:.9f}\n")
    finally:
        if out is not sys.stdout:
            out.close()


def _cmd_denoise_demo(args) -> None:
    rng = np.random.default_rng(args.seed)
    h, w = args.size[1], args.size[0]
    c, n_cat = args.channels, args.classes
    if h < 6 or w < 6:
        raise UsageError("demo needs --size of at least 6x6")
    x = rng.normal(0.0, 1.0, (c, h, w))

    # Two axis-aligned boxes (image coords at stride 1) with distinct labels.
    def rect(x0, y0, x1, y1):
        return Quad(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    q1 = rect(1.0, 1.0, w / 2 - 1.0, h / 2.0)
    q2 = rect(w / 2 + 1.0, h / 2 + 1.0, w - 1.0, h - 1.0)
    labels = [1, min(2, n_cat)]
    label_map = denoise.rasterize_masks([q1, q2], labels, (h, w), stride=1.0)

    assignment = denoise.equal_channel_split(c, n_cat)
    weights = denoise.onehot_denoise_weights(label_map, assignment, c)
    decoupled = denoise.inld_reweight(x, weights)
    report = denoise.decouple_report(decoupled, weights, present=set(labels))

    params = denoise.random_block_params(rng, c, n_cat + 1)
    seg_logits, denoised = denoise.inld_block_forward(x, params)
    ce = losses.pixelwise_ce(seg_logits, label_map)
    filtered = denoise.imld_residual(x, args.filter)

    print(f"seed={args.seed} map=({c},{h},{w}) classes={n_cat}")
    print(f"label histogram: {np.bincount(label_map.ravel(), minlength=n_cat + 1).tolist()}")
    print(f"decoupled energies: present={report.present_mean:.6f} absent={report.absent_mean:.6f} background={report.background_mean:.6f}")
    print(f"segmentation ce (random block): {ce:.6f}")
    print(f"imld[{args.filter}] mean abs delta: {np.abs(filtered - x).mean():.6f}")
    print(f"denoised map mean abs: {np.abs(denoised).mean():.6f}")
    if args.output:
        denoise.write_feature_map(args.output, denoised)
        print(f"wrote {args.output}")


_COMMANDS = {
    "iou": _cmd_iou,
    "nms": _cmd_nms,
    "anchors": _cmd_anchors,
    "tile": _cmd_tile,
    "merge": _cmd_merge,
    "eval": _cmd_eval,
    "loss-landscape": _cmd_loss_landscape,
    "denoise-demo": _cmd_denoise_demo,
}


if __name__ == "__main__":
    sys.exit(main())
