"""Contrastive class-activation heatmaps for convolutional networks.

Loads models from a manifest + blob pair, runs forward/backward passes,
and turns activation gradients into rendered saliency overlays.
"""

from .blob import read_blobs, write_blobs
from .cam import (
    ContrastStats,
    ImportanceWeights,
    SaliencyMap,
    combine_maps,
    contrast_explanation,
    contrast_sweep,
    importance_weights,
    patch_positions,
    patch_regression_explanation,
    why_explanation,
)
from .engine import (
    ForwardTrace,
    Prediction,
    backward_to_layer,
    finite_diff_gradient,
    forward,
    forward_from,
    logits_node_id,
    node_forward,
    node_vjp,
    predict,
)
from .errors import (
    BlobFormatError,
    ContrastCamError,
    GraphValidationError,
    ImageFormatError,
    ManifestError,
    ModelError,
    ShapeError,
    TargetError,
    TaskError,
    UnsupportedNodeError,
    UsageError,
)
from .gradcheck import GradcheckResult, check_graph, check_node
from .imageio import (
    ImageBuffer,
    RenderSpec,
    decode_image,
    load_and_preprocess,
    render,
    write_png,
)
from .losses import (
    ContrastTarget,
    LossSeed,
    class_score_seed,
    class_target,
    cross_entropy_seed,
    mse_seed,
    scalar_target,
    self_target,
)
from .model import InputSpec, ModelGraph, NodeSpec, infer_shapes, load_model, parse_manifest
from .tensor import Tensor, bilinear_resize, minmax_normalize, spatial_mean, tensor

__all__ = [
    "BlobFormatError",
    "ContrastCamError",
    "ContrastStats",
    "ContrastTarget",
    "ForwardTrace",
    "GradcheckResult",
    "GraphValidationError",
    "ImageBuffer",
    "ImageFormatError",
    "ImportanceWeights",
    "InputSpec",
    "LossSeed",
    "ManifestError",
    "ModelError",
    "ModelGraph",
    "NodeSpec",
    "Prediction",
    "RenderSpec",
    "SaliencyMap",
    "ShapeError",
    "TargetError",
    "TaskError",
    "Tensor",
    "UnsupportedNodeError",
    "UsageError",
    "backward_to_layer",
    "bilinear_resize",
    "check_graph",
    "check_node",
    "class_score_seed",
    "class_target",
    "combine_maps",
    "contrast_explanation",
    "contrast_sweep",
    "cross_entropy_seed",
    "decode_image",
    "finite_diff_gradient",
    "forward",
    "forward_from",
    "importance_weights",
    "infer_shapes",
    "load_and_preprocess",
    "load_model",
    "logits_node_id",
    "minmax_normalize",
    "mse_seed",
    "node_forward",
    "node_vjp",
    "parse_manifest",
    "patch_positions",
    "patch_regression_explanation",
    "predict",
    "read_blobs",
    "render",
    "scalar_target",
    "self_target",
    "spatial_mean",
    "tensor",
    "why_explanation",
    "write_blobs",
    "write_png",
]

__version__ = "0.1.0"
