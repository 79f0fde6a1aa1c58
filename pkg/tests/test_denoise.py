from __future__ import annotations

import io

import numpy as np
import pytest

from rboxkit.boxes import Quad
from rboxkit.denoise import (
    AttentionWeights,
    ConvParams,
    DenoiseWeights,
    attention_reweight,
    decouple_report,
    dilated_conv2d,
    equal_channel_split,
    identity_block_params,
    imld_residual,
    inld_block_forward,
    inld_reweight,
    nonlocal_weights,
    objectness_coproduct,
    onehot_denoise_weights,
    random_block_params,
    rasterize_masks,
    read_feature_map,
    write_feature_map,
)

from oracles import (
    attention_loop,
    bilateral_loop,
    conv_loop,
    mean3x3_loop,
    median3x3_loop,
    nonlocal_loop,
    rasterize_loop,
    reweight_loop,
)


def rect_quad(x0, y0, x1, y1) -> Quad:
    return Quad(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


class TestAttention:
    def test_identity_weights(self):
        rng = np.random.default_rng(83)
        x = rng.normal(0, 1, (3, 4, 5))
        w = AttentionWeights(np.ones((4, 5)), np.ones(3))
        assert np.array_equal(attention_reweight(x, w), x)

    def test_zero_spatial(self):
        x = np.ones((2, 3, 3))
        w = AttentionWeights(np.zeros((3, 3)), np.ones(2))
        assert not attention_reweight(x, w).any()

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(89)
        x = rng.normal(0, 1, (4, 6, 5))
        w = AttentionWeights(rng.uniform(0, 1, (6, 5)), rng.uniform(0, 1, 4))
        got = attention_reweight(x, w)
        assert np.abs(got - attention_loop(x, w.spatial, w.channel)).max() <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            attention_reweight(np.ones((2, 3, 3)), AttentionWeights(np.ones((4, 4)), np.ones(2)))

    def test_range_validation(self):
        with pytest.raises(ValueError):
            AttentionWeights(np.full((2, 2), 1.5), np.ones(1))


class TestChannelSplit:
    def test_equal_split_with_remainder(self):
        ranges = equal_channel_split(16, 2)
        assert ranges[1] == (0, 5)
        assert ranges[2] == (5, 10)
        assert ranges[0] == (10, 16)

    def test_covering_enforced(self):
        with pytest.raises(ValueError):
            DenoiseWeights(np.ones((4, 2, 2)), {0: (0, 2), 1: (3, 4)})

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            DenoiseWeights(np.ones((4, 2, 2)), {0: (0, 2), 1: (1, 4)})


class TestInldReweight:
    def test_ones_identity(self):
        rng = np.random.default_rng(97)
        x = rng.normal(0, 1, (6, 4, 4))
        w = DenoiseWeights(np.ones_like(x), equal_channel_split(6, 2))
        assert np.array_equal(inld_reweight(x, w), x)

    def test_zeros(self):
        x = np.ones((6, 4, 4))
        w = DenoiseWeights(np.zeros_like(x), equal_channel_split(6, 2))
        assert not inld_reweight(x, w).any()

    def test_block_constant_matches_loop(self):
        rng = np.random.default_rng(101)
        x = rng.normal(0, 1, (9, 5, 5))
        assignment = equal_channel_split(9, 2)
        data = np.empty_like(x)
        for cat, (lo, hi) in assignment.items():
            data[lo:hi] = 0.25 * (cat + 1)
        w = DenoiseWeights(data, assignment)
        got = inld_reweight(x, w)
        assert np.abs(got - reweight_loop(x, data, assignment)).max() <= 1e-12

    def test_onehot_zeroes_complement_channels(self):
        labels = np.array([[0, 1], [2, 1]])
        assignment = equal_channel_split(7, 2)
        w = onehot_denoise_weights(labels, assignment, 7)
        x = np.ones((7, 2, 2))
        y = inld_reweight(x, w)
        for cat, (lo, hi) in assignment.items():
            inside = labels == cat
            assert np.array_equal(y[lo:hi, inside], np.ones((hi - lo, inside.sum())))
            assert not y[lo:hi, ~inside].any()


class TestDecoupleReport:
    def test_absent_energy_zero_after_masking(self):
        labels = np.array([[1, 1], [0, 0]])  # category 2 absent
        assignment = equal_channel_split(6, 2)
        w = onehot_denoise_weights(labels, assignment, 6)
        rng = np.random.default_rng(103)
        y = inld_reweight(rng.normal(0, 1, (6, 2, 2)), w)
        report = decouple_report(y, w, present={1})
        assert report.absent_mean == 0.0
        assert report.present_mean > 0.0

    def test_uniform_map_equal_groups(self):
        y = np.full((6, 3, 3), 0.5)
        w = DenoiseWeights(np.ones_like(y), equal_channel_split(6, 2))
        report = decouple_report(y, w, present={1})
        assert report.present_mean == report.absent_mean == report.background_mean == 0.5

    def test_constructed_ratio(self):
        assignment = equal_channel_split(6, 2)
        y = np.zeros((6, 2, 2))
        y[assignment[1][0] : assignment[1][1]] = 3.0
        y[assignment[2][0] : assignment[2][1]] = 1.0
        w = DenoiseWeights(np.ones_like(y), assignment)
        report = decouple_report(y, w, present={1})
        assert report.present_mean / report.absent_mean == pytest.approx(3.0)
        assert report.category_energy[1] == pytest.approx(3.0)
        assert report.background_mean == 0.0


class TestRasterize:
    def test_no_boxes(self):
        assert not rasterize_masks([], [], (4, 4)).any()

    def test_half_plane_box(self):
        # Box covering x in [0, 4] at stride 1 on an 8-wide canvas: centers
        # 0.5, 1.5, 2.5, 3.5 fall inside.
        out = rasterize_masks([rect_quad(0, 0, 4, 8)], [3], (8, 8), 1.0)
        assert np.array_equal(out[:, :4], np.full((8, 4), 3))
        assert not out[:, 4:].any()

    def test_nested_smaller_wins(self):
        outer = rect_quad(0, 0, 8, 8)
        inner = rect_quad(2, 2, 5, 5)
        out = rasterize_masks([outer, inner], [1, 2], (8, 8), 1.0)
        expect = rasterize_loop(
            [outer.canonical().vertices, inner.canonical().vertices], [1, 2], (8, 8), 1.0
        )
        assert np.array_equal(out, expect)
        assert out[3, 3] == 2
        assert out[0, 0] == 1

    def test_matches_loop_oracle_rotated(self):
        rng = np.random.default_rng(107)
        quads = []
        labels = []
        for k in range(4):
            cx, cy = rng.uniform(4, 12, 2)
            w, h = rng.uniform(2, 8, 2)
            t = np.radians(rng.uniform(-90, 0))
            u = np.array([np.cos(t), np.sin(t)])
            v = np.array([-np.sin(t), np.cos(t)])
            c = np.array([cx, cy])
            verts = tuple(tuple(c + sw * u * w / 2 + sh * v * h / 2) for sw, sh in ((-1, -1), (1, -1), (1, 1), (-1, 1)))
            quads.append(Quad(verts))
            labels.append(k + 1)
        got = rasterize_masks(quads, labels, (16, 16), 1.0)
        expect = rasterize_loop([q.canonical().vertices for q in quads], labels, (16, 16), 1.0)
        assert np.array_equal(got, expect)

    def test_stride_scales_coordinates(self):
        out = rasterize_masks([rect_quad(0, 0, 16, 16)], [1], (4, 4), 8.0)
        # Centers at 4 and 12 in image coords; only those < 16 inside.
        assert np.array_equal(out, np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]))

    def test_idempotent_on_induced_boxes(self):
        quads = [rect_quad(1.2, 1.2, 6.8, 4.3), rect_quad(8.1, 5.6, 14.9, 11.2)]
        labels = [1, 2]
        first = rasterize_masks(quads, labels, (16, 16), 1.0)
        induced = []
        for lab in labels:
            ys, xs = np.nonzero(first == lab)
            induced.append(
                rect_quad(xs.min() + 0.5, ys.min() + 0.5, xs.max() + 0.5, ys.max() + 0.5)
            )
        again = rasterize_masks(induced, labels, (16, 16), 1.0)
        assert np.array_equal(first, again)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            rasterize_masks([], [], (0, 4))
        with pytest.raises(ValueError):
            rasterize_masks([rect_quad(0, 0, 1, 1)], [0], (4, 4))
        with pytest.raises(ValueError):
            rasterize_masks([rect_quad(0, 0, 1, 1)], [1, 2], (4, 4))


class TestCoproduct:
    def test_scalar_case(self):
        out = objectness_coproduct(np.array([[0.8]]), np.array([0.5]))
        assert out[0, 0] == pytest.approx(0.4)

    def test_identity_objectness(self):
        rng = np.random.default_rng(109)
        probs = rng.uniform(0, 1, (5, 3))
        out = objectness_coproduct(probs, np.ones(5))
        assert np.array_equal(out, probs)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(113)
        probs = rng.uniform(0, 1, (50, 7))
        obj = rng.uniform(0.01, 1, 50)
        out = objectness_coproduct(probs, obj)
        assert np.array_equal(out.argmax(axis=1), probs.argmax(axis=1))

    def test_range_validation(self):
        with pytest.raises(ValueError):
            objectness_coproduct(np.array([[1.2]]), np.array([0.5]))


class TestDilatedConv:
    def test_identity_1x1(self):
        rng = np.random.default_rng(127)
        x = rng.normal(0, 1, (3, 5, 5))
        k = np.zeros((3, 3, 1, 1))
        k[np.arange(3), np.arange(3), 0, 0] = 1.0
        assert np.abs(dilated_conv2d(x, k) - x).max() == 0.0

    def test_averaging_interior(self):
        x = np.full((1, 6, 6), 2.5)
        k = np.full((1, 1, 3, 3), 1 / 9)
        out = dilated_conv2d(x, k)
        assert np.abs(out[0, 1:-1, 1:-1] - 2.5).max() <= 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(131)
        for dilation in (1, 2, 3):
            x = rng.normal(0, 1, (2, 8, 7))
            k = rng.normal(0, 1, (4, 2, 3, 3))
            b = rng.normal(0, 1, 4)
            got = dilated_conv2d(x, k, dilation, b)
            assert np.abs(got - conv_loop(x, k, dilation, b)).max() <= 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(137)
        x1 = rng.normal(0, 1, (2, 6, 6))
        x2 = rng.normal(0, 1, (2, 6, 6))
        k = rng.normal(0, 1, (3, 2, 3, 3))
        lhs = dilated_conv2d(2.0 * x1 + 3.0 * x2, k, 2)
        rhs = 2.0 * dilated_conv2d(x1, k, 2) + 3.0 * dilated_conv2d(x2, k, 2)
        assert np.abs(lhs - rhs).max() <= 1e-9

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            dilated_conv2d(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            dilated_conv2d(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)))


class TestInldBlock:
    def test_identity_params(self):
        rng = np.random.default_rng(139)
        x = rng.normal(0, 1, (4, 6, 6))
        params = identity_block_params(4, 3, n_dilated=2)
        seg, denoised = inld_block_forward(x, params)
        assert np.array_equal(denoised, x)
        assert seg.shape == (3, 6, 6)
        assert not seg.any()

    def test_zero_weight_head(self):
        rng = np.random.default_rng(149)
        x = rng.normal(0, 1, (3, 4, 4))
        params = identity_block_params(3, 2)
        # exp underflows to 0 below ~-745, making the sigmoid exactly 0.
        zero_head = ConvParams(np.zeros((3, 3, 1, 1)), np.full(3, -800.0), 1)
        params = type(params)(params.dilated, params.fuse, params.seg_head, zero_head)
        _, denoised = inld_block_forward(x, params)
        assert not denoised.any()

    def test_matches_composition_of_primitives(self):
        rng = np.random.default_rng(151)
        x = rng.normal(0, 1, (3, 6, 5))
        params = random_block_params(rng, 3, 4, n_dilated=2)
        seg, denoised = inld_block_forward(x, params)

        h = x
        for conv in params.dilated:
            h = conv_loop(h, conv.weight, conv.dilation, conv.bias)
        h = conv_loop(h, params.fuse.weight, 1, params.fuse.bias)
        seg_expect = conv_loop(h, params.seg_head.weight, 1, params.seg_head.bias)
        z = conv_loop(h, params.weight_head.weight, 1, params.weight_head.bias)
        denoised_expect = (1.0 / (1.0 + np.exp(-z))) * x
        assert np.abs(seg - seg_expect).max() <= 1e-9
        assert np.abs(denoised - denoised_expect).max() <= 1e-9

    def test_table_dilation_schedule(self):
        params = identity_block_params(2, 2, n_dilated=5, dilations=(4, 4, 3, 2, 2))
        assert [c.dilation for c in params.dilated] == [4, 4, 3, 2, 2]


class TestImld:
    def test_zero_filter_identity(self):
        rng = np.random.default_rng(157)
        x = rng.normal(0, 1, (3, 5, 5))
        assert np.array_equal(imld_residual(x, "zero"), x)

    def test_mean_constant_interior(self):
        x = np.full((2, 6, 6), 1.5)
        out = imld_residual(x, "mean3x3")
        assert np.abs(out[:, 1:-1, 1:-1] - 3.0).max() <= 1e-12

    def test_median_constant_everywhere(self):
        x = np.full((2, 5, 5), -0.75)
        assert np.abs(imld_residual(x, "median3x3") + 1.5).max() <= 1e-12

    def test_nonlocal_gaussian_constant_map(self):
        x = np.full((2, 4, 4), 0.6)
        assert np.abs(imld_residual(x, "nonlocal_gaussian") - 1.2).max() <= 1e-12

    @pytest.mark.parametrize(
        "filter_id,oracle",
        [
            ("mean3x3", mean3x3_loop),
            ("median3x3", median3x3_loop),
            ("nonlocal_gaussian", lambda x: nonlocal_loop(x, "gaussian")),
            ("nonlocal_dot", lambda x: nonlocal_loop(x, "dot")),
            ("bilateral_gaussian", lambda x: bilateral_loop(x, "gaussian")),
            ("bilateral_dot", lambda x: bilateral_loop(x, "dot")),
        ],
    )
    def test_matches_loop_oracle(self, filter_id, oracle):
        rng = np.random.default_rng(163)
        # Positive-valued maps keep dot-product normalization well-conditioned.
        x = rng.uniform(0.1, 1.0, (1, 8, 8))
        got = imld_residual(x, filter_id)
        assert np.abs(got - (oracle(x) + x)).max() <= 1e-6

    def test_nonlocal_weights_rows_sum_to_one(self):
        rng = np.random.default_rng(167)
        x = rng.uniform(0.1, 1.0, (3, 6, 6))
        for kind in ("gaussian", "dot"):
            w = nonlocal_weights(x, kind)
            assert np.abs(w.sum(axis=1) - 1.0).max() <= 1e-9

    def test_unknown_filter(self):
        with pytest.raises(ValueError):
            imld_residual(np.ones((1, 2, 2)), "box5x5")


class TestFmapIO:
    def test_roundtrip_file(self, tmp_path):
        rng = np.random.default_rng(173)
        x = rng.normal(0, 1, (3, 4, 5)).astype(np.float32)
        path = tmp_path / "map.fmap"
        write_feature_map(str(path), x)
        back = read_feature_map(str(path))
        assert back.dtype == np.float32
        assert np.array_equal(back, x)
        assert path.stat().st_size == 16 + 4 * 3 * 4 * 5

    def test_roundtrip_stream(self):
        x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        buf = io.BytesIO()
        write_feature_map(buf, x)
        buf.seek(0)
        assert np.array_equal(read_feature_map(buf), x)

    def test_header_layout(self):
        buf = io.BytesIO()
        write_feature_map(buf, np.zeros((1, 2, 3), dtype=np.float32))
        raw = buf.getvalue()
        assert raw[:4] == b"FMAP"
        assert raw[4:16] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + (3).to_bytes(4, "little")

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            read_feature_map(io.BytesIO(b"JUNK" + b"\0" * 20))

    def test_truncated(self):
        buf = io.BytesIO()
        write_feature_map(buf, np.zeros((2, 2, 2), dtype=np.float32))
        raw = buf.getvalue()[:-4]
        with pytest.raises(ValueError):
            read_feature_map(io.BytesIO(raw))
