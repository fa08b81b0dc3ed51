"""semfuse: semantic TSDF fusion and instance-aware pseudo-label refinement.

Turns localized RGB-D sequences with noisy per-frame semantic predictions
into refined, instance-coherent pseudo-labels: predictions are fused into a
semantic TSDF volume, multi-view-consistent label maps are raycast from it,
and instance masks from a promptable segmenter override each instance with
its majority class.
"""

from .errors import ConfigError, DataError, FormatError, TransportError
from .geometry import CameraIntrinsics, Pose, project_point, transform_point, \
    unproject_pixel
from .labels import IGNORE_ID, LabelMap, LabelSpace
from .refine import InstanceMask, Prompt, RefinementConfig, grid_prompts, \
    informed_prompts, majority_class, order_masks, refine_frame
from .segmenter import FileExchangeSegmenter, MaskRequest, MaskResponse, \
    OraclePerturbation, OracleSegmenter, decode_rle, encode_rle, request_masks
from .evaluate import ConfusionMatrix
from .volume import Frame, LabelRenderer, SemanticVolume, load_volume, \
    raycast_pixel, render_labels, save_volume

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "ConfigError", "ConfusionMatrix", "DataError",
    "FileExchangeSegmenter", "FormatError", "Frame", "IGNORE_ID",
    "InstanceMask", "LabelMap", "LabelRenderer", "LabelSpace", "MaskRequest",
    "MaskResponse", "OraclePerturbation", "OracleSegmenter", "Pose", "Prompt",
    "RefinementConfig", "SemanticVolume", "TransportError", "decode_rle",
    "encode_rle", "grid_prompts", "informed_prompts", "load_volume",
    "majority_class", "order_masks", "project_point", "raycast_pixel",
    "refine_frame", "render_labels", "request_masks", "save_volume",
    "transform_point", "unproject_pixel",
]
