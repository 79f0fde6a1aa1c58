from __future__ import annotations

import numpy as np
import pytest

from rboxkit.boxes import Quad, RBox5, canonicalize, rbox_corners
from rboxkit.dota import (
    Annotation,
    Detection,
    clip_annotations,
    merge_detections,
    parse_dota,
    plan_tiles,
    read_submission_dir,
    remap_detection,
    write_submission,
)
from rboxkit.errors import AnnotationParseError
from rboxkit.geometry import riou

from oracles import brute_nms

DOTA_SAMPLE = """imagesource:GoogleEarth
gsd:0.146343590398
0 0 10 0 10 10 0 10 plane 0
20.5 0 30 0.5 30 9.5 20 10 small-vehicle 1
"""


class TestParse:
    def test_basic_line(self):
        annos = parse_dota("0 0 10 0 10 10 0 10 plane 0")
        assert len(annos) == 1
        assert annos[0].category == "plane"
        assert annos[0].difficult == 0
        assert annos[0].quad.vertices == ((0, 0), (10, 0), (10, 10), (0, 10))

    def test_empty_file(self):
        assert parse_dota("") == []
        assert parse_dota("\n\n") == []

    def test_headers_skipped(self):
        annos = parse_dota(DOTA_SAMPLE)
        assert len(annos) == 2
        assert annos[1].category == "small-vehicle"
        assert annos[1].difficult == 1

    def test_short_line_reports_line_number(self):
        text = "imagesource:x\n0 0 10 0 10 10 0 10 plane 0\n1 2 3\n"
        with pytest.raises(AnnotationParseError) as err:
            parse_dota(text)
        assert err.value.line_no == 3

    def test_bad_coordinate(self):
        with pytest.raises(AnnotationParseError):
            parse_dota("a 0 10 0 10 10 0 10 plane 0")

    def test_category_with_spaces(self):
        annos = parse_dota("0 0 1 0 1 1 0 1 storage tank 0")
        assert annos[0].category == "storage tank"


class TestTiling:
    def test_single_tile_when_exact(self):
        plan = plan_tiles((600, 600))
        assert plan.tiles == ((0, 0, 800 / 600),)

    def test_1024_grid(self):
        plan = plan_tiles((1024, 1024))
        origins = {(ox, oy) for ox, oy, _ in plan.tiles}
        assert origins == {(0, 0), (424, 0), (0, 424), (424, 424)}

    def test_small_image_single_origin(self):
        plan = plan_tiles((400, 300))
        assert plan.tiles == ((0, 0, 800 / 600),)

    def test_full_coverage_4000(self):
        plan = plan_tiles((4000, 4000))
        covered = np.zeros((4000, 4000), dtype=bool)
        for ox, oy, _ in plan.tiles:
            covered[oy : oy + plan.window, ox : ox + plan.window] = True
        assert covered.all()

    def test_no_duplicate_origins(self):
        for size in ((750, 613), (601, 599), (4000, 1024)):
            plan = plan_tiles(size)
            origins = [(ox, oy) for ox, oy, _ in plan.tiles]
            assert len(origins) == len(set(origins))

    def test_bad_overlap(self):
        with pytest.raises(ValueError):
            plan_tiles((1000, 1000), window=600, overlap=600)

    def test_origins_on_stride_except_last(self):
        plan = plan_tiles((2000, 600))
        xs = sorted({ox for ox, _, _ in plan.tiles})
        assert xs[:-1] == [0, 450, 900, 1350]
        assert xs[-1] == 1400  # shifted back to touch the border


class TestRemap:
    def test_identity(self):
        det = Detection("img", "plane", 0.9, RBox5(10, 20, 5, 4, -30))
        assert remap_detection(det, (0, 0), 1.0) == det

    def test_scale_and_translate(self):
        det = Detection("img", "plane", 0.9, RBox5(400, 400, 30, 15, -45))
        out = remap_detection(det, (450, 450), 800 / 600)
        assert out.box.cx == pytest.approx(750)
        assert out.box.cy == pytest.approx(750)
        assert out.box.w == pytest.approx(30 * 600 / 800)
        assert out.box.theta == -45
        assert out.score == 0.9

    def test_roundtrip(self):
        rng = np.random.default_rng(179)
        for _ in range(100):
            box = canonicalize((rng.uniform(0, 800), rng.uniform(0, 800), rng.uniform(2, 80), rng.uniform(2, 80), rng.uniform(-90, -1e-6)))
            det = Detection("img", "c", 0.5, box)
            origin = (rng.uniform(0, 3000), rng.uniform(0, 3000))
            scale = 800 / 600
            glob = remap_detection(det, origin, scale)
            back = Detection(
                "img",
                "c",
                0.5,
                RBox5(
                    (glob.box.cx - origin[0]) * scale,
                    (glob.box.cy - origin[1]) * scale,
                    glob.box.w * scale,
                    glob.box.h * scale,
                    glob.box.theta,
                ),
            )
            assert back.box.astuple() == pytest.approx(box.astuple(), abs=1e-9)


class TestClipAnnotations:
    def test_keeps_inside_drops_outside(self):
        annos = parse_dota(DOTA_SAMPLE)
        kept = clip_annotations(annos, (0, 0), 15, scale=1.0)
        assert [a.category for a in kept] == ["plane"]

    def test_area_threshold(self):
        # Box straddles the window edge: 40% inside -> dropped at 0.5, kept at 0.3.
        ann = Annotation(Quad(((-6, 0), (4, 0), (4, 10), (-6, 10))), "ship", 0)
        assert clip_annotations([ann], (0, 0), 100, keep_fraction=0.5) == []
        kept = clip_annotations([ann], (0, 0), 100, keep_fraction=0.3)
        assert len(kept) == 1

    def test_coordinates_remapped(self):
        ann = Annotation(Quad(((100, 100), (110, 100), (110, 110), (100, 110))), "ship", 0)
        kept = clip_annotations([ann], (90, 95), 600, scale=800 / 600)
        assert kept[0].quad.vertices[0] == pytest.approx(((100 - 90) * 800 / 600, (100 - 95) * 800 / 600))


class TestMerge:
    def test_single_tile_is_plain_nms(self):
        a = Detection("img", "plane", 0.9, RBox5(0, 0, 10, 10, -90))
        b = Detection("img", "plane", 0.8, RBox5(1, 0, 10, 10, -90))
        out = merge_detections([[a, b]], 0.5)
        assert out == [a]

    def test_duplicate_across_tiles_collapses(self):
        box = RBox5(700, 700, 20, 10, -30)
        d1 = Detection("img", "plane", 0.9, box)
        d2 = Detection("img", "plane", 0.85, box)
        out = merge_detections([[d1], [d2]], 0.5)
        assert out == [d1]

    def test_categories_do_not_suppress_each_other(self):
        box = RBox5(700, 700, 20, 10, -30)
        d1 = Detection("img", "plane", 0.9, box)
        d2 = Detection("img", "ship", 0.85, box)
        out = merge_detections([[d1], [d2]], 0.5)
        assert len(out) == 2
        assert out[0].score >= out[1].score

    def test_images_do_not_suppress_each_other(self):
        box = RBox5(700, 700, 20, 10, -30)
        d1 = Detection("img1", "plane", 0.9, box)
        d2 = Detection("img2", "plane", 0.85, box)
        assert len(merge_detections([[d1], [d2]], 0.5)) == 2

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(181)
        boxes = [
            canonicalize((rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(5, 40), rng.uniform(5, 40), rng.uniform(-90, -1e-6)))
            for _ in range(50)
        ]
        scores = rng.uniform(0, 1, 50)
        dets = [Detection("img", "plane", s, b) for s, b in zip(scores, boxes)]
        matrix = [[riou(a, b) for b in boxes] for a in boxes]
        expect_idx = brute_nms(matrix, scores.tolist(), 0.3)
        out = merge_detections([dets], 0.3)
        assert [d.box for d in out] == [boxes[i] for i in sorted(expect_idx, key=lambda i: -scores[i])]

    def test_no_surviving_pair_above_threshold(self):
        rng = np.random.default_rng(191)
        dets = [
            Detection(
                "img",
                "plane",
                float(rng.uniform(0, 1)),
                canonicalize((rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(5, 30), rng.uniform(5, 30), rng.uniform(-90, -1e-6))),
            )
            for _ in range(40)
        ]
        out = merge_detections([dets], 0.3)
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                assert riou(out[i].box, out[j].box) <= 0.3


class TestSubmission:
    def test_empty_with_explicit_categories(self, tmp_path):
        paths = write_submission([], "obb", str(tmp_path), categories=["plane"])
        assert [p.split("/")[-1] for p in paths] == ["Task1_plane.txt"]
        assert (tmp_path / "Task1_plane.txt").read_text() == ""

    def test_obb_line_has_ten_fields(self, tmp_path):
        det = Detection("P0001", "plane", 0.875, RBox5(100, 50, 30, 10, -35))
        write_submission([det], "obb", str(tmp_path))
        line = (tmp_path / "Task1_plane.txt").read_text().strip()
        fields = line.split()
        assert len(fields) == 10
        assert fields[0] == "P0001"
        assert fields[1] == "0.875000"

    def test_hbb_line_has_six_fields(self, tmp_path):
        det = Detection("P0001", "ship", 0.5, RBox5(100, 50, 30, 10, -90))
        write_submission([det], "hbb", str(tmp_path))
        fields = (tmp_path / "Task2_ship.txt").read_text().split()
        assert len(fields) == 6
        assert float(fields[2]) == pytest.approx(95.0)  # xmin: cx - h/2

    def test_roundtrip_within_tolerance(self, tmp_path):
        rng = np.random.default_rng(193)
        dets = [
            Detection(
                f"P{k:04d}",
                rng.choice(["plane", "ship", "harbor"]),
                float(np.round(rng.uniform(0, 1), 6)),
                canonicalize((rng.uniform(0, 4000), rng.uniform(0, 4000), rng.uniform(5, 300), rng.uniform(5, 300), rng.uniform(-90, -1e-6))),
            )
            for k in range(60)
        ]
        write_submission(dets, "obb", str(tmp_path))
        back = read_submission_dir(str(tmp_path), "obb")
        flat = {(d.image_id, d.category): d for cat in back.values() for d in cat}
        assert len(flat) == 60
        for det in dets:
            got = flat[(det.image_id, det.category)]
            assert got.score == pytest.approx(det.score, abs=1e-6)
            want = sorted(rbox_corners(det.box))
            have = sorted(rbox_corners(got.box))
            for (x0, y0), (x1, y1) in zip(want, have):
                assert abs(x0 - x1) <= 1e-4
                assert abs(y0 - y1) <= 1e-4

    def test_unknown_task(self, tmp_path):
        with pytest.raises(ValueError):
            write_submission([], "quad", str(tmp_path), categories=["x"])
