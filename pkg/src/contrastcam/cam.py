"""Saliency map construction.

A map answers either "why this class?" (one-hot seed on the class logit)
or "why this prediction, rather than that target?" (gradient of a
contrast loss). Both share one pipeline: backpropagate the seed to the
target layer, average-pool the gradient maps into per-channel importance
weights, combine the weighted activation maps, resize to the input, and
for classification rectify and normalize. Regression maps keep their
sign and raw scale.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import ForwardTrace, backward_to_layer, forward, logits_node_id, predict
from .errors import ShapeError, TaskError
from .losses import ContrastTarget, LossSeed, class_score_seed, cross_entropy_seed, mse_seed
from .model import ModelGraph
from .tensor import Tensor, bilinear_resize, minmax_normalize, require_rank, spatial_mean

DEFAULT_VARIANCE_BOOST = 5.0


@dataclass(frozen=True)
class ImportanceWeights:
    """One weight per channel of the target layer."""

    alpha: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True)
class SaliencyMap:
    values: Tensor  # rank 2, explained-image resolution
    signed: bool
    normalized: bool
    target: str
    layer: str

    def __post_init__(self) -> None:
        require_rank(self.values, 2, "saliency map")
        if not self.signed and bool((self.values.array < 0).any()):
            raise ValueError("unsigned saliency map contains negative values")
        if self.normalized:
            arr = self.values.array
            if bool((arr < 0).any()) or bool((arr > 1).any()):
                raise ValueError("normalized saliency map outside [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ContrastStats:
    """Per-pixel mean and population variance over a full target sweep."""

    mean_map: SaliencyMap
    variance_map: SaliencyMap
    boost: float
    targets_covered: int

    def boosted_variance(self) -> Tensor:
        """Variance values scaled for rendering; applied before any
        normalization so low-variance structure survives quantization."""
        return Tensor(self.variance_map.values.array * np.float32(self.boost))


def importance_weights(grad_maps: Tensor) -> ImportanceWeights:
    """Spatial mean of each gradient map: the per-channel weight vector."""
    require_rank(grad_maps, 4, "gradient maps")
    means = spatial_mean(grad_maps)
    return ImportanceWeights(alpha=tuple(float(v) for v in means.array[0]))


def combine_maps(alpha: ImportanceWeights, activations: Tensor, rectify: bool) -> Tensor:
    """Mean over channels of alpha[k] * A[k], optionally clamped at 0."""
    require_rank(activations, 4, "activation maps")
    k = activations.shape[1]
    if len(alpha) != k:
        raise ShapeError(f"{len(alpha)} importance weights for {k} activation channels")
    a = np.asarray(alpha.alpha, dtype=np.float64)
    maps = activations.array[0].astype(np.float64)
    combined = np.einsum("k,khw->hw", a, maps) / k
    if rectify:
        combined = np.maximum(combined, 0.0)
    return Tensor(combined.astype(np.float32))


def _map_from_seed(
    graph: ModelGraph,
    trace: ForwardTrace,
    seed: LossSeed,
    at: str,
    rectify: bool,
    normalize: bool,
    target_desc: str,
) -> SaliencyMap:
    layer = graph.target_layer
    grads = backward_to_layer(trace, seed.output_grad, layer, at=at)
    combined = combine_maps(importance_weights(grads), trace.activation(layer), rectify=rectify)
    h, w = graph.input_spec.shape[1], graph.input_spec.shape[2]
    resized = bilinear_resize(combined, h, w)
    if normalize:
        resized = minmax_normalize(resized)
    return SaliencyMap(values=resized, signed=not rectify, normalized=normalize, target=target_desc, layer=layer)


def why_explanation(graph: ModelGraph, trace: ForwardTrace, class_index: int | None = None) -> SaliencyMap:
    """Plain class-evidence map: one-hot seed on the class logit."""
    if not graph.is_classification:
        raise TaskError("class explanations require a classification model")
    if class_index is None:
        class_index = predict(trace).class_index
    at = logits_node_id(graph)
    logits = trace.activation(at).array.reshape(-1)
    seed = class_score_seed(graph.n_classes, class_index, score=float(logits[class_index]))
    return _map_from_seed(
        graph, trace, seed, at, rectify=True, normalize=True, target_desc=f"class {class_index}"
    )


def resolve_target(graph: ModelGraph, trace: ForwardTrace, target: ContrastTarget) -> ContrastTarget:
    """Replace a self target by the concrete prediction and type-check
    the variant against the task."""
    pred = predict(trace)
    if graph.is_classification:
        if target.value is not None:
            raise TaskError("scalar contrast target on a classification model")
        if target.is_self:
            return ContrastTarget(class_index=pred.class_index)
        return target
    if target.class_index is not None:
        raise TaskError("class contrast target on a regression model")
    if target.is_self:
        return ContrastTarget(value=pred.value)
    return target


def contrast_seed(graph: ModelGraph, trace: ForwardTrace, target: ContrastTarget) -> tuple[LossSeed, str, str]:
    """Loss seed for a contrast target, plus the injection node id and a
    human-readable target description."""
    concrete = resolve_target(graph, trace, target)
    if graph.is_classification:
        at = logits_node_id(graph)
        seed = cross_entropy_seed(trace.activation(at), concrete)
    else:
        at = graph.nodes[-1].id
        seed = mse_seed(Tensor(trace.output), concrete, output_range=graph.output_range)
    return seed, at, concrete.describe()


def contrast_explanation(
    graph: ModelGraph, trace: ForwardTrace, target: ContrastTarget, rectify: bool = True
) -> SaliencyMap:
    """Map of what separates the prediction from the contrast target.

    Classification maps are rectified and normalized (set rectify=False
    for the raw signed combination); regression maps are always signed
    and left unnormalized so magnitudes stay comparable across targets.
    """
    seed, at, desc = contrast_seed(graph, trace, target)
    if graph.is_classification:
        return _map_from_seed(graph, trace, seed, at, rectify=rectify, normalize=rectify, target_desc=desc)
    return _map_from_seed(graph, trace, seed, at, rectify=False, normalize=False, target_desc=desc)


def contrast_sweep(
    graph: ModelGraph,
    trace: ForwardTrace,
    boost: float = DEFAULT_VARIANCE_BOOST,
    workers: int = 1,
) -> ContrastStats:
    """Contrast against every class except the prediction; reduce the
    per-target maps to per-pixel mean and population variance.

    Statistics are taken over the rectified pre-normalization maps so
    values stay comparable across targets. Targets are processed in
    ascending class order and merged in that fixed order, so results are
    identical at any worker count.
    """
    if not graph.is_classification:
        raise TaskError("sweeps require a classification model")
    n = graph.n_classes
    if n < 2:
        raise TaskError("sweeps need at least 2 classes")
    p = predict(trace).class_index
    targets = [q for q in range(n) if q != p]
    at = logits_node_id(graph)

    def one(q: int) -> np.ndarray:
        seed = cross_entropy_seed(trace.activation(at), q)
        m = _map_from_seed(graph, trace, seed, at, rectify=True, normalize=False, target_desc=f"class {q}")
        return m.values.array

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(one, targets))
    else:
        maps = [one(q) for q in targets]

    stack = np.stack(maps).astype(np.float64)
    mean = stack.mean(axis=0)
    var = np.square(stack - mean).mean(axis=0)
    layer = graph.target_layer
    return ContrastStats(
        mean_map=SaliencyMap(Tensor(mean.astype(np.float32)), signed=False, normalized=False, target="sweep mean", layer=layer),
        variance_map=SaliencyMap(Tensor(var.astype(np.float32)), signed=False, normalized=False, target="sweep variance", layer=layer),
        boost=float(boost),
        targets_covered=len(targets),
    )


def patch_positions(length: int, patch: int, stride: int) -> list[int]:
    """Row-major 1-D start offsets: 0, stride, ... while the patch fits."""
    if patch > length:
        raise ShapeError(f"patch {patch} larger than extent {length}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return list(range(0, length - patch + 1, stride))


def patch_regression_explanation(
    graph: ModelGraph,
    image: Tensor,
    target: ContrastTarget,
    patch_size: int | None = None,
    stride: int = 4,
    average: bool = False,
    workers: int = 1,
) -> SaliencyMap:
    """Patch-wise contrast map for a regression model scored on patches.

    The image is cut into overlapping patches of the model's input size;
    each patch gets its own forward pass and signed contrast map, and the
    maps are summed into a full-image canvas (no overlap renormalization;
    set average=True to divide by coverage instead).
    """
    if graph.is_classification:
        raise TaskError("patch explanations require a regression model")
    require_rank(image, 4, "image")
    c, ph, pw = graph.input_spec.shape
    if patch_size is not None and (patch_size != ph or patch_size != pw):
        raise ShapeError(f"patch size {patch_size} does not match model input {ph}x{pw}")
    if image.shape[1] != c:
        raise ShapeError(f"image has {image.shape[1]} channels, model expects {c}")
    h, w = image.shape[2], image.shape[3]
    rows = patch_positions(h, ph, stride)
    cols = patch_positions(w, pw, stride)
    positions = [(r, cc) for r in rows for cc in cols]

    def one(pos: tuple[int, int]) -> np.ndarray:
        r, cc = pos
        patch = Tensor(image.array[:, :, r : r + ph, cc : cc + pw])
        patch_trace = forward(graph, patch)
        m = contrast_explanation(graph, patch_trace, target)
        return m.values.array

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            patch_maps = list(pool.map(one, positions))
    else:
        patch_maps = [one(p) for p in positions]

    canvas = np.zeros((h, w), dtype=np.float64)
    coverage = np.zeros((h, w), dtype=np.float64)
    for (r, cc), pm in zip(positions, patch_maps):
        canvas[r : r + ph, cc : cc + pw] += pm.astype(np.float64)
        coverage[r : r + ph, cc : cc + pw] += 1.0
    if average:
        canvas = np.divide(canvas, coverage, out=np.zeros_like(canvas), where=coverage > 0)
    return SaliencyMap(
        values=Tensor(canvas.astype(np.float32)),
        signed=True,
        normalized=False,
        target=target.describe(),
        layer=graph.target_layer,
    )
