"""Feature-map denoising algebra.

Two families of forward-only array transforms over C x H x W maps:

* instance-level: attention re-weighting, hierarchical per-category channel
  re-weighting with box-derived segmentation supervision, an objectness
  coproduct, and the dilated-conv block that produces segmentation logits
  plus a sigmoid weight map;
* image-level: residual filters Y = F(X) + X with mean/median/non-local/
  bilateral variants, where non-local weights span all spatial positions and
  bilateral restricts them to a 3x3 neighborhood.

No parameters are learned here; identity- or random-initialized weights
exercise the dataflow.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Mapping, Sequence

import numpy as np

from .boxes import Quad

FMAP_MAGIC = b"FMAP"

IMLD_FILTERS = (
    "zero",
    "mean3x3",
    "median3x3",
    "nonlocal_gaussian",
    "nonlocal_dot",
    "bilateral_gaussian",
    "bilateral_dot",
)


def _check_fmap(x: np.ndarray, name: str = "feature map") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"{name} must be (C, H, W) with positive dims, got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite entries")
    return x


@dataclass(frozen=True)
class AttentionWeights:
    """Spatial (H, W) and channel (C) weights, both in [0, 1]."""

    spatial: np.ndarray
    channel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "spatial", np.asarray(self.spatial, dtype=np.float64))
        object.__setattr__(self, "channel", np.asarray(self.channel, dtype=np.float64))
        if self.spatial.ndim != 2 or self.channel.ndim != 1:
            raise ValueError("spatial must be (H, W) and channel (C,)")
        for name in ("spatial", "channel"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0 or arr.max() > 1):
                raise ValueError(f"{name} weights must lie in [0, 1]")


ChannelAssignment = Mapping[int, tuple[int, int]]


def equal_channel_split(channels: int, num_categories: int) -> dict[int, tuple[int, int]]:
    """Split C channels evenly over categories 1..I, remainder to background (key 0)."""
    if channels < num_categories + 1:
        raise ValueError(f"{channels} channels cannot cover {num_categories} categories + background")
    base = channels // (num_categories + 1)
    ranges = {i + 1: (i * base, (i + 1) * base) for i in range(num_categories)}
    ranges[0] = (num_categories * base, channels)
    return ranges


def _check_assignment(assignment: ChannelAssignment, channels: int) -> None:
    covered = np.zeros(channels, dtype=bool)
    if 0 not in assignment:
        raise ValueError("assignment needs a background range under key 0")
    for cat, (lo, hi) in assignment.items():
        if not 0 <= lo < hi <= channels:
            raise ValueError(f"category {cat} range ({lo}, {hi}) out of bounds for C={channels}")
        if covered[lo:hi].any():
            raise ValueError(f"category {cat} range overlaps another")
        covered[lo:hi] = True
    if not covered.all():
        raise ValueError("channel ranges must cover every channel")


@dataclass(frozen=True)
class DenoiseWeights:
    """Hierarchical per-category weight map: (C, H, W) data in [0, 1] plus the
    category -> contiguous channel range assignment (background under key 0)."""

    data: np.ndarray
    assignment: ChannelAssignment

    def __post_init__(self):
        object.__setattr__(self, "data", _check_fmap(self.data, "weight map"))
        if self.data.min() < 0 or self.data.max() > 1:
            raise ValueError("denoise weights must lie in [0, 1]")
        _check_assignment(self.assignment, self.data.shape[0])


def attention_reweight(x: np.ndarray, weights: AttentionWeights) -> np.ndarray:
    """Y[c,h,w] = spatial[h,w] * X[c,h,w] * channel[c]."""
    x = _check_fmap(x)
    if weights.spatial.shape != x.shape[1:] or weights.channel.shape != (x.shape[0],):
        raise ValueError(
            f"weight shapes {weights.spatial.shape}/{weights.channel.shape} do not match map {x.shape}"
        )
    return weights.spatial[None, :, :] * x * weights.channel[:, None, None]


def inld_reweight(x: np.ndarray, weights: DenoiseWeights) -> np.ndarray:
    """Elementwise hierarchical re-weighting Y = W * X."""
    x = _check_fmap(x)
    if weights.data.shape != x.shape:
        raise ValueError(f"weight shape {weights.data.shape} does not match map {x.shape}")
    return weights.data * x


def onehot_denoise_weights(labels: np.ndarray, assignment: ChannelAssignment, channels: int) -> DenoiseWeights:
    """Block weights from a label map: category channels are 1 exactly where
    the label matches (background channels where the label is 0)."""
    labels = np.asarray(labels)
    data = np.zeros((channels,) + labels.shape)
    for cat, (lo, hi) in assignment.items():
        data[lo:hi] = (labels == cat).astype(np.float64)[None]
    return DenoiseWeights(data, dict(assignment))


@dataclass(frozen=True)
class DecoupleReport:
    """Mean absolute response per category channel group, plus group rollups
    over present categories, absent categories and background channels."""

    category_energy: dict[int, float]
    present_mean: float
    absent_mean: float
    background_mean: float


def decouple_report(y: np.ndarray, weights: DenoiseWeights, present: set[int]) -> DecoupleReport:
    y = _check_fmap(y)
    if y.shape != weights.data.shape:
        raise ValueError("map shape does not match weight assignment")
    energy = {}
    sums = {"present": [0.0, 0], "absent": [0.0, 0], "background": [0.0, 0]}
    for cat, (lo, hi) in weights.assignment.items():
        block = np.abs(y[lo:hi])
        energy[cat] = float(block.mean())
        group = "background" if cat == 0 else ("present" if cat in present else "absent")
        sums[group][0] += float(block.sum())
        sums[group][1] += block.size

    def mean_of(group: str) -> float:
        total, count = sums[group]
        return total / count if count else 0.0

    return DecoupleReport(energy, mean_of("present"), mean_of("absent"), mean_of("background"))


def rasterize_masks(
    quads: Sequence[Quad],
    labels: Sequence[int],
    canvas: tuple[int, int],
    stride: float = 1.0,
) -> np.ndarray:
    """Label-map rasterization of boxes at a feature stride.

    A cell (i, j) takes the label of the quad containing the image point
    ((j + 0.5) * stride, (i + 0.5) * stride); where quads overlap, the
    smaller-area quad wins. Uncovered cells stay 0.
    """
    h, w = canvas
    if h < 1 or w < 1:
        raise ValueError(f"canvas must be at least 1x1, got {canvas}")
    if len(quads) != len(labels):
        raise ValueError(f"{len(quads)} quads vs {len(labels)} labels")
    if any(lab < 1 for lab in labels):
        raise ValueError("labels must be >= 1 (0 is reserved for background)")
    out = np.zeros((h, w), dtype=np.int64)
    if not quads:
        return out
    xs = (np.arange(w) + 0.5) * stride
    ys = (np.arange(h) + 0.5) * stride
    gx, gy = np.meshgrid(xs, ys)
    # Paint large to small so smaller quads overwrite in overlaps.
    order = sorted(range(len(quads)), key=lambda i: -abs(quads[i].signed_area))
    for i in order:
        verts = quads[i].canonical().vertices
        inside = np.ones((h, w), dtype=bool)
        for k in range(4):
            ax, ay = verts[k]
            bx, by = verts[(k + 1) % 4]
            inside &= (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= -1e-9
        out[inside] = labels[i]
    return out


def objectness_coproduct(class_probs: np.ndarray, objectness: np.ndarray) -> np.ndarray:
    """Joint scores P(class, object) = P(class | object) * P(object)."""
    class_probs = np.asarray(class_probs, dtype=np.float64)
    objectness = np.asarray(objectness, dtype=np.float64)
    if class_probs.ndim != 2 or objectness.shape != (class_probs.shape[0],):
        raise ValueError(
            f"expected (N, I) class probs with (N,) objectness, got {class_probs.shape} / {objectness.shape}"
        )
    for arr, name in ((class_probs, "class probabilities"), (objectness, "objectness")):
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ValueError(f"{name} must lie in [0, 1]")
    return class_probs * objectness[:, None]


def dilated_conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    dilation: int = 1,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Same-padding cross-correlation with a dilated odd-sized kernel.

    x: (C_in, H, W); kernel: (C_out, C_in, k, k); zero padding.
    """
    x = _check_fmap(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(f"kernel must be (C_out, C_in, k, k), got {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise ValueError(f"kernel C_in {kernel.shape[1]} != map C {x.shape[0]}")
    k = kernel.shape[2]
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    _, h, w = x.shape
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((kernel.shape[0], h, w))
    for p in range(k):
        for q in range(k):
            patch = xp[:, p * dilation : p * dilation + h, q * dilation : q * dilation + w]
            out += np.einsum("oc,chw->ohw", kernel[:, :, p, q], patch)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (kernel.shape[0],):
            raise ValueError(f"bias shape {bias.shape} != (C_out,)")
        out += bias[:, None, None]
    return out


@dataclass(frozen=True)
class ConvParams:
    weight: np.ndarray
    bias: np.ndarray
    dilation: int = 1


@dataclass(frozen=True)
class InldBlockParams:
    """Weights for the denoising block: N dilated convs, a 1x1 fuse conv, then
    parallel 1x1 segmentation and weight heads."""

    dilated: tuple[ConvParams, ...]
    fuse: ConvParams
    seg_head: ConvParams
    weight_head: ConvParams


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def inld_block_forward(x: np.ndarray, params: InldBlockParams) -> tuple[np.ndarray, np.ndarray]:
    """Run the block: returns (segmentation logits, denoised map).

    The denoised map is sigmoid(weight head) multiplied into the input.
    """
    x = _check_fmap(x)
    h = x
    for conv in params.dilated:
        h = dilated_conv2d(h, conv.weight, conv.dilation, conv.bias)
    h = dilated_conv2d(h, params.fuse.weight, params.fuse.dilation, params.fuse.bias)
    seg_logits = dilated_conv2d(h, params.seg_head.weight, 1, params.seg_head.bias)
    weight_map = _sigmoid(dilated_conv2d(h, params.weight_head.weight, 1, params.weight_head.bias))
    return seg_logits, weight_map * x


def _identity_kernel(channels: int, k: int) -> np.ndarray:
    w = np.zeros((channels, channels, k, k))
    w[np.arange(channels), np.arange(channels), k // 2, k // 2] = 1.0
    return w


def identity_block_params(
    channels: int,
    num_classes: int,
    n_dilated: int = 1,
    kernel_size: int = 3,
    dilations: Sequence[int] | None = None,
) -> InldBlockParams:
    """Parameters for which the denoised output equals the input exactly.

    The weight head bias saturates the sigmoid at 1.0; the segmentation head
    is zero. Dilations default to 1, 2, 3, ... when several convs are stacked.
    """
    dil = _dilation_schedule(n_dilated, dilations)
    zeros = lambda c: np.zeros(c)
    dilated = tuple(
        ConvParams(_identity_kernel(channels, kernel_size), zeros(channels), d) for d in dil
    )
    fuse = ConvParams(_identity_kernel(channels, 1), zeros(channels), 1)
    seg = ConvParams(np.zeros((num_classes, channels, 1, 1)), zeros(num_classes), 1)
    # Bias 500 underflows exp(-500) to 0, so the sigmoid is exactly 1.
    head = ConvParams(np.zeros((channels, channels, 1, 1)), np.full(channels, 500.0), 1)
    return InldBlockParams(dilated, fuse, seg, head)


def random_block_params(
    rng: np.random.Generator,
    channels: int,
    num_classes: int,
    n_dilated: int = 1,
    kernel_size: int = 3,
    dilations: Sequence[int] | None = None,
    scale: float = 0.1,
) -> InldBlockParams:
    """Gaussian-initialized block parameters (fixed by the caller's rng)."""
    dil = _dilation_schedule(n_dilated, dilations)

    def conv(c_out: int, c_in: int, k: int, d: int) -> ConvParams:
        return ConvParams(rng.normal(0.0, scale, (c_out, c_in, k, k)), rng.normal(0.0, scale, c_out), d)

    dilated = tuple(conv(channels, channels, kernel_size, d) for d in dil)
    fuse = conv(channels, channels, 1, 1)
    seg = conv(num_classes, channels, 1, 1)
    head = conv(channels, channels, 1, 1)
    return InldBlockParams(dilated, fuse, seg, head)


def _dilation_schedule(n_dilated: int, dilations: Sequence[int] | None) -> list[int]:
    if n_dilated < 0:
        raise ValueError("n_dilated must be >= 0")
    if dilations is None:
        return list(range(1, n_dilated + 1))
    if len(dilations) != n_dilated:
        raise ValueError(f"{len(dilations)} dilations for {n_dilated} convs")
    return list(dilations)


def nonlocal_weights(x: np.ndarray, kind: str) -> np.ndarray:
    """(HW, HW) non-local weights; row i weighs all positions for output i.

    gaussian: softmax over embedded dot-product similarity; dot: similarity
    normalized by its row sum. Every row sums to 1.
    """
    x = _check_fmap(x)
    c, h, w = x.shape
    v = x.reshape(c, h * w)
    sims = v.T @ v
    if kind == "gaussian":
        sims = sims - sims.max(axis=1, keepdims=True)
        e = np.exp(sims)
        return e / e.sum(axis=1, keepdims=True)
    if kind == "dot":
        denom = sims.sum(axis=1, keepdims=True)
        if np.any(np.abs(denom) < 1e-12):
            raise ValueError("dot-product weights are degenerate (row similarity sums ~ 0)")
        return sims / denom
    raise ValueError(f"unknown non-local kind {kind!r}")


def _nonlocal_filter(x: np.ndarray, kind: str) -> np.ndarray:
    c, h, w = x.shape
    weights = nonlocal_weights(x, kind)
    return (weights @ x.reshape(c, h * w).T).T.reshape(c, h, w)


_NEIGHBORHOOD = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def _shifted_stack(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(9, C, H, W) neighbor values (0 outside) and (9, H, W) validity mask."""
    c, h, w = x.shape
    stack = np.zeros((9, c, h, w))
    valid = np.zeros((9, h, w), dtype=bool)
    for k, (dy, dx) in enumerate(_NEIGHBORHOOD):
        ys0, ys1 = max(0, dy), min(h, h + dy)
        xs0, xs1 = max(0, dx), min(w, w + dx)
        yd0, yd1 = max(0, -dy), min(h, h - dy)
        xd0, xd1 = max(0, -dx), min(w, w - dx)
        stack[k, :, yd0:yd1, xd0:xd1] = x[:, ys0:ys1, xs0:xs1]
        valid[k, yd0:yd1, xd0:xd1] = True
    return stack, valid


def _bilateral_filter(x: np.ndarray, kind: str) -> np.ndarray:
    stack, valid = _shifted_stack(x)
    sims = np.einsum("chw,kchw->khw", x, stack)
    if kind == "gaussian":
        sims = np.where(valid, sims, -np.inf)
        sims -= sims.max(axis=0, keepdims=True)
        weights = np.exp(sims)
        weights[~valid] = 0.0
    else:
        weights = np.where(valid, sims, 0.0)
    denom = weights.sum(axis=0, keepdims=True)
    if np.any(np.abs(denom) < 1e-12):
        raise ValueError("bilateral weights are degenerate (window sums ~ 0)")
    weights = weights / denom
    return np.einsum("khw,kchw->chw", weights, stack)


def _mean3x3(x: np.ndarray) -> np.ndarray:
    stack, _ = _shifted_stack(x)
    return stack.sum(axis=0) / 9.0


def _median3x3(x: np.ndarray) -> np.ndarray:
    stack, valid = _shifted_stack(x)
    stack = np.where(valid[:, None, :, :], stack, np.nan)
    return np.nanmedian(stack, axis=0)


def imld_residual(x: np.ndarray, filter_id: str) -> np.ndarray:
    """Residual image-level denoise: Y = F(X) + X for the named filter."""
    x = _check_fmap(x)
    if filter_id == "zero":
        f = np.zeros_like(x)
    elif filter_id == "mean3x3":
        f = _mean3x3(x)
    elif filter_id == "median3x3":
        f = _median3x3(x)
    elif filter_id == "nonlocal_gaussian":
        f = _nonlocal_filter(x, "gaussian")
    elif filter_id == "nonlocal_dot":
        f = _nonlocal_filter(x, "dot")
    elif filter_id == "bilateral_gaussian":
        f = _bilateral_filter(x, "gaussian")
    elif filter_id == "bilateral_dot":
        f = _bilateral_filter(x, "dot")
    else:
        raise ValueError(f"unknown filter {filter_id!r}; choose from {IMLD_FILTERS}")
    return f + x


def write_feature_map(dest: str | BinaryIO, x: np.ndarray) -> None:
    """Serialize to the flat binary format: 16-byte header (magic, C, H, W as
    little-endian uint32) followed by float32 data in C order."""
    x = _check_fmap(x)
    c, h, w = x.shape
    header = FMAP_MAGIC + struct.pack("<III", c, h, w)
    payload = x.astype("<f4").tobytes(order="C")
    if isinstance(dest, (str, bytes)):
        with open(dest, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    else:
        dest.write(header)
        dest.write(payload)


def read_feature_map(src: str | BinaryIO) -> np.ndarray:
    """Inverse of write_feature_map; returns a float32 (C, H, W) array."""
    if isinstance(src, (str, bytes)):
        with open(src, "rb") as fh:
            data = fh.read()
    else:
        data = src.read()
    if len(data) < 16 or data[:4] != FMAP_MAGIC:
        raise ValueError("not a feature-map file (bad magic)")
    c, h, w = struct.unpack("<III", data[4:16])
    expect = 16 + 4 * c * h * w
    if len(data) != expect:
        raise ValueError(f"truncated feature map: {len(data)} bytes, expected {expect}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(c, h, w).copy()
