"""Rotated-box detection toolkit: box algebra, rotated IoU/NMS, anchor
codecs, boundary-aware regression losses, feature-map denoising, DOTA tiling
and VOC-style evaluation."""

from .anchors import (
    AnchorSpec,
    RegressionTarget,
    assign_anchors,
    decode,
    encode,
    generate_anchor_array,
    generate_anchors,
)
from .boxes import (
    HBox,
    Quad,
    RBox5,
    canonicalize,
    quad_to_hbox,
    quad_to_rbox,
    rbox_corners,
    rbox_to_hbox,
    rbox_to_quad,
)
from .denoise import (
    AttentionWeights,
    DenoiseWeights,
    InldBlockParams,
    attention_reweight,
    decouple_report,
    dilated_conv2d,
    equal_channel_split,
    imld_residual,
    inld_block_forward,
    inld_reweight,
    objectness_coproduct,
    rasterize_masks,
    read_feature_map,
    write_feature_map,
)
from .dota import (
    Annotation,
    Detection,
    TilePlan,
    clip_annotations,
    merge_detections,
    parse_dota,
    plan_tiles,
    remap_detection,
    write_submission,
)
from .errors import (
    AnnotationParseError,
    DecodeOverflowError,
    DegeneratePairError,
    EmptyBatchError,
    InvalidBoxError,
    RBoxKitError,
)
from .evaluation import EvalConfig, GroundTruth, average_precision, map_report, match_detections
from .geometry import convex_clip, hiou, hnms, polygon_area, riou, rnms
from .losses import (
    LossConfig,
    SampleBatch,
    focal_loss,
    iou_smooth_l1,
    loss_landscape,
    multitask_loss,
    pixelwise_ce,
    smooth_l1,
    smooth_l1_total,
)

__version__ = "0.1.0"
