#!/usr/bin/env python3
"""Regenerate the shared kernel fixture corpus at fixtures/shared/kernels.json.

The corpus pins exact (bit-for-bit) expected outputs of the scalar kernels so
alternative implementations can prove parity. JSON numbers are written with
Python's shortest-roundtrip repr, which parses back to the identical double.
"""
from __future__ import annotations

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from rboxkit.anchors import RegressionTarget, decode, encode
from rboxkit.boxes import Quad, RBox5, canonicalize
from rboxkit.denoise import rasterize_masks
from rboxkit.geometry import riou, rnms
from rboxkit.losses import focal_loss, iou_smooth_l1, smooth_l1

OUT = os.path.join(os.path.dirname(__file__), "..", "fixtures", "shared", "kernels.json")


def rand_box(rng, span=100.0, smin=2.0, smax=40.0):
    return canonicalize(
        (
            float(rng.uniform(-span, span)),
            float(rng.uniform(-span, span)),
            float(rng.uniform(smin, smax)),
            float(rng.uniform(smin, smax)),
            float(rng.uniform(-90.0, -1e-6)),
        )
    )


def box_row(b: RBox5):
    return [b.cx, b.cy, b.w, b.h, b.theta]


def main() -> None:
    rng = np.random.default_rng(1234)

    a_boxes = [rand_box(rng, span=30) for _ in range(12)]
    b_boxes = [rand_box(rng, span=30) for _ in range(9)]
    # Include exact-duplicate and far-apart rows to pin the fast paths.
    b_boxes[0] = a_boxes[0]
    b_boxes[1] = canonicalize((500.0, 500.0, 10.0, 5.0, -45.0))
    riou_fixture = {
        "a": [box_row(b) for b in a_boxes],
        "b": [box_row(b) for b in b_boxes],
        "iou": [[riou(x, y) for y in b_boxes] for x in a_boxes],
    }

    rnms_cases = []
    for _ in range(5):
        boxes = [rand_box(rng, span=60, smin=5, smax=45) for _ in range(40)]
        scores = [float(s) for s in rng.uniform(0, 1, 40)]
        threshold = float(rng.uniform(0.2, 0.6))
        rnms_cases.append(
            {
                "boxes": [box_row(b) for b in boxes],
                "scores": scores,
                "threshold": threshold,
                "keep": rnms(boxes, scores, threshold),
            }
        )

    gts = [rand_box(rng, span=200, smin=2, smax=120) for _ in range(50)]
    anchors = [rand_box(rng, span=200, smin=2, smax=120) for _ in range(50)]
    targets = [encode(g, a) for g, a in zip(gts, anchors)]
    decoded = [decode(t, a) for t, a in zip(targets, anchors)]
    codec_fixture = {
        "gt": [box_row(b) for b in gts],
        "anchor": [box_row(b) for b in anchors],
        "target": [list(t.astuple()) for t in targets],
        "decoded": [box_row(b) for b in decoded],
    }

    xs = [float(v) for v in rng.uniform(-4, 4, 60)]
    betas = [float(v) for v in rng.uniform(0.2, 2.5, 60)]
    smooth_fixture = {"x": xs, "beta": betas, "value": [smooth_l1(x, b) for x, b in zip(xs, betas)]}

    ps = [float(v) for v in rng.uniform(0.01, 0.99, 60)]
    tgts = [int(v) for v in rng.integers(0, 2, 60)]
    alphas = [float(v) for v in rng.uniform(0.1, 0.9, 60)]
    gammas = [float(v) for v in rng.uniform(0.5, 4.0, 60)]
    focal_fixture = {
        "p": ps,
        "target": tgts,
        "alpha": alphas,
        "gamma": gammas,
        "value": [focal_loss(p, t, a, g) for p, t, a, g in zip(ps, tgts, alphas, gammas)],
    }

    ism_cases = []
    for _ in range(25):
        gt = rand_box(rng, span=20, smin=5, smax=40)
        anchor = canonicalize(
            (
                gt.cx + float(rng.uniform(-5, 5)),
                gt.cy + float(rng.uniform(-5, 5)),
                gt.w * float(rng.uniform(0.7, 1.4)),
                gt.h * float(rng.uniform(0.7, 1.4)),
                float(rng.uniform(-90, -1e-6)),
            )
        )
        pred = canonicalize(
            (
                gt.cx + float(rng.uniform(-3, 3)),
                gt.cy + float(rng.uniform(-3, 3)),
                gt.w * float(rng.uniform(0.8, 1.25)),
                gt.h * float(rng.uniform(0.8, 1.25)),
                float(rng.uniform(-90, -1e-6)),
            )
        )
        v_gt = encode(gt, anchor)
        v_pred = encode(pred, anchor)
        beta = float(rng.uniform(0.5, 1.5))
        value, grad = iou_smooth_l1(v_pred, v_gt, anchor, beta)
        ism_cases.append(
            {
                "v_pred": list(v_pred.astuple()),
                "v_gt": list(v_gt.astuple()),
                "anchor": box_row(anchor),
                "beta": beta,
                "value": value,
                "grad": list(grad),
            }
        )

    raster_cases = []
    for _ in range(5):
        k = int(rng.integers(2, 5))
        quads = []
        labels = []
        for i in range(k):
            cx, cy = (float(v) for v in rng.uniform(4, 20, 2))
            w, h = (float(v) for v in rng.uniform(3, 12, 2))
            t = float(np.radians(rng.uniform(-90, 0)))
            u = (np.cos(t), np.sin(t))
            v = (-np.sin(t), np.cos(t))
            verts = tuple(
                (cx + sw * u[0] * w / 2 + sh * v[0] * h / 2, cy + sw * u[1] * w / 2 + sh * v[1] * h / 2)
                for sw, sh in ((-1, -1), (1, -1), (1, 1), (-1, 1))
            )
            quads.append(Quad(verts))
            labels.append(i + 1)
        h_cells, w_cells = int(rng.integers(10, 24)), int(rng.integers(10, 24))
        stride = float(rng.choice([1.0, 2.0]))
        label_map = rasterize_masks(quads, labels, (h_cells, w_cells), stride)
        raster_cases.append(
            {
                "quads": [[list(p) for p in q.vertices] for q in quads],
                "labels": labels,
                "height": h_cells,
                "width": w_cells,
                "stride": stride,
                "map": label_map.tolist(),
            }
        )

    corpus = {
        "version": 1,
        "riou": riou_fixture,
        "rnms": rnms_cases,
        "codec": codec_fixture,
        "smooth_l1": smooth_fixture,
        "focal": focal_fixture,
        "iou_smooth_l1": ism_cases,
        "rasterize": raster_cases,
    }
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        json.dump(corpus, fh, indent=1)
        fh.write("\n")
    print(f"wrote {os.path.normpath(OUT)}")


if __name__ == "__main__":
    main()
