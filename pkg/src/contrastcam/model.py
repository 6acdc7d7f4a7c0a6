"""Model manifest parsing, graph validation, and shape inference.

A model is a JSON manifest (structure) plus a CTSB blob file (weights).
Node order in the manifest is execution order: every node may only read
the graph input (``"input"``) or nodes that appear before it, which
makes accepted graphs topologically sorted and cycle-free by
construction. Unknown manifest fields are rejected everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .blob import read_blobs
from .errors import (
    BlobFormatError,
    GraphValidationError,
    ManifestError,
    ShapeError,
    UnsupportedNodeError,
)
from .tensor import Shape, Tensor

INPUT_ID = "input"

CLASSIFICATION = "classification"
REGRESSION = "regression"

# kind -> (required params, optional params with defaults, weight roles
# (required, optional), input count)
_KIND_TABLE: dict[str, tuple[tuple[str, ...], dict[str, Any], tuple[str, ...], tuple[str, ...], int]] = {
    "conv2d": (("kernel_size",), {"stride": 1, "padding": 0}, ("weight",), ("bias",), 1),
    "relu": ((), {}, (), (), 1),
    "maxpool2d": (("kernel_size", "stride"), {"padding": 0}, (), (), 1),
    "avgpool2d": (("kernel_size", "stride"), {"padding": 0}, (), (), 1),
    "global_avgpool": ((), {}, (), (), 1),
    "linear": ((), {}, ("weight",), ("bias",), 1),
    "flatten": ((), {}, (), (), 1),
    "softmax": ((), {}, (), (), 1),
    "batchnorm_eval": ((), {"epsilon": 1e-5}, ("gamma", "beta", "running_mean", "running_var"), (), 1),
    "add": ((), {}, (), (), 2),
    "identity": ((), {}, (), (), 1),
}


@dataclass(frozen=True)
class InputSpec:
    shape: tuple[int, int, int]  # (C, H, W)
    mean: tuple[float, ...]  # per channel
    std: tuple[float, ...]  # per channel

    @property
    def channels(self) -> int:
        return self.shape[0]

    @property
    def height(self) -> int:
        return self.shape[1]

    @property
    def width(self) -> int:
        return self.shape[2]

    @property
    def tensor_shape(self) -> Shape:
        return (1,) + self.shape


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()
    weight_refs: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ModelGraph:
    """Validated immutable model: safe for concurrent shared reads."""

    name: str
    task: str
    input_spec: InputSpec
    class_labels: tuple[str, ...] | None
    output_range: tuple[float, float] | None
    nodes: tuple[NodeSpec, ...]
    weights: dict[str, dict[str, Tensor]]  # node id -> role -> tensor
    shapes: dict[str, Shape]  # node id -> output shape
    target_layer: str

    @property
    def is_classification(self) -> bool:
        return self.task == CLASSIFICATION

    @property
    def n_classes(self) -> int:
        return len(self.class_labels) if self.class_labels else 0

    @property
    def output_node(self) -> NodeSpec:
        return self.nodes[-1]

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise GraphValidationError(f"unknown node id {node_id!r}")


def _check_keys(obj: Mapping[str, Any], required: tuple[str, ...], optional: tuple[str, ...], where: str) -> None:
    for key in required:
        if key not in obj:
            raise ManifestError(f"{where}: missing required field {key!r}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ManifestError(f"{where}: unknown field(s) {sorted(unknown)}")


def _positive_int(value: Any, minimum: int, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ManifestError(f"{where}: expected integer >= {minimum}, got {value!r}")
    return value


def _parse_input_spec(obj: Any) -> InputSpec:
    if not isinstance(obj, dict):
        raise ManifestError("input_spec: expected an object")
    _check_keys(obj, ("shape", "mean", "std"), (), "input_spec")
    shape = obj["shape"]
    if not (isinstance(shape, list) and len(shape) == 3):
        raise ManifestError("input_spec.shape: expected [channels, height, width]")
    dims = tuple(_positive_int(d, 1, "input_spec.shape") for d in shape)
    mean = obj["mean"]
    std = obj["std"]
    for label, seq in (("mean", mean), ("std", std)):
        if not (isinstance(seq, list) and len(seq) == dims[0]):
            raise ManifestError(f"input_spec.{label}: expected {dims[0]} values")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in seq):
            raise ManifestError(f"input_spec.{label}: expected numbers")
    if any(float(s) <= 0 for s in std):
        raise ManifestError("input_spec.std: values must be > 0")
    return InputSpec(shape=dims, mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std))


def _parse_node(obj: Any, index: int, seen: set[str]) -> NodeSpec:
    where = f"nodes[{index}]"
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: expected an object")
    _check_keys(obj, ("id", "kind", "inputs"), ("params", "weight_refs"), where)
    node_id = obj["id"]
    if not isinstance(node_id, str) or not node_id:
        raise ManifestError(f"{where}: id must be a nonempty string")
    if node_id == INPUT_ID:
        raise ManifestError(f"{where}: id {INPUT_ID!r} is reserved for the graph input")
    if node_id in seen:
        raise GraphValidationError(f"duplicate node id {node_id!r}")
    kind = obj["kind"]
    if kind not in _KIND_TABLE:
        raise UnsupportedNodeError(f"node {node_id!r}: unsupported kind {kind!r}")
    required_params, optional_params, req_weights, opt_weights, n_inputs = _KIND_TABLE[kind]

    raw_params = obj.get("params", {})
    if not isinstance(raw_params, dict):
        raise ManifestError(f"{where}: params must be an object")
    _check_keys(raw_params, required_params, tuple(optional_params), f"node {node_id!r} params")
    params = dict(optional_params)
    params.update(raw_params)
    for key in ("kernel_size", "stride"):
        if key in params:
            params[key] = _positive_int(params[key], 1, f"node {node_id!r} params.{key}")
    if "padding" in params:
        params["padding"] = _positive_int(params["padding"], 0, f"node {node_id!r} params.padding")
    if "epsilon" in params:
        eps = params["epsilon"]
        if not isinstance(eps, (int, float)) or isinstance(eps, bool) or float(eps) <= 0:
            raise ManifestError(f"node {node_id!r} params.epsilon: expected a number > 0")
        params["epsilon"] = float(eps)

    inputs = obj["inputs"]
    if not (isinstance(inputs, list) and all(isinstance(i, str) for i in inputs)):
        raise ManifestError(f"{where}: inputs must be a list of node ids")
    if len(inputs) != n_inputs:
        raise GraphValidationError(
            f"node {node_id!r}: kind {kind!r} takes exactly {n_inputs} input(s), got {len(inputs)}"
        )
    for ref in inputs:
        if ref != INPUT_ID and ref not in seen:
            raise GraphValidationError(f"node {node_id!r}: input {ref!r} does not name a prior node")

    raw_refs = obj.get("weight_refs", {})
    if not isinstance(raw_refs, dict):
        raise ManifestError(f"{where}: weight_refs must be an object")
    _check_keys(raw_refs, req_weights, opt_weights, f"node {node_id!r} weight_refs")
    for role, ref in raw_refs.items():
        if not isinstance(ref, str) or not ref:
            raise ManifestError(f"node {node_id!r} weight_refs.{role}: expected a tensor name")

    return NodeSpec(id=node_id, kind=kind, params=params, inputs=tuple(inputs), weight_refs=dict(raw_refs))


def _conv_spatial(size: int, kernel: int, stride: int, padding: int, node_id: str) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"node {node_id!r}: computed output dimension {out} from input size {size}, "
            f"kernel {kernel}, stride {stride}, padding {padding}"
        )
    return out


def _node_output_shape(
    node: NodeSpec,
    input_shapes: list[Shape],
    weights: dict[str, Tensor],
) -> Shape:
    def expect_rank(shape: Shape, rank: int) -> None:
        if len(shape) != rank:
            raise ShapeError(
                f"node {node.id!r}: kind {node.kind!r} expects rank-{rank} input, got shape {shape}"
            )

    shape = input_shapes[0]
    if node.kind == "conv2d":
        expect_rank(shape, 4)
        w = weights["weight"]
        k = node.params["kernel_size"]
        if w.rank != 4:
            raise ShapeError(f"node {node.id!r}: conv weight must have rank 4, got {w.rank}")
        out_c, in_c, kh, kw = w.shape
        if (kh, kw) != (k, k):
            raise ShapeError(
                f"node {node.id!r}: weight kernel {kh}x{kw} does not match kernel_size {k}"
            )
        if in_c != shape[1]:
            raise ShapeError(
                f"node {node.id!r}: weight expects {in_c} input channels, input has {shape[1]}"
            )
        bias = weights.get("bias")
        if bias is not None and bias.shape != (out_c,):
            raise ShapeError(f"node {node.id!r}: bias shape {bias.shape} must be ({out_c},)")
        oh = _conv_spatial(shape[2], k, node.params["stride"], node.params["padding"], node.id)
        ow = _conv_spatial(shape[3], k, node.params["stride"], node.params["padding"], node.id)
        return (shape[0], out_c, oh, ow)
    if node.kind in ("maxpool2d", "avgpool2d"):
        expect_rank(shape, 4)
        k = node.params["kernel_size"]
        oh = _conv_spatial(shape[2], k, node.params["stride"], node.params["padding"], node.id)
        ow = _conv_spatial(shape[3], k, node.params["stride"], node.params["padding"], node.id)
        return (shape[0], shape[1], oh, ow)
    if node.kind == "global_avgpool":
        expect_rank(shape, 4)
        return (shape[0], shape[1], 1, 1)
    if node.kind == "linear":
        expect_rank(shape, 2)
        w = weights["weight"]
        if w.rank != 2:
            raise ShapeError(f"node {node.id!r}: linear weight must have rank 2, got {w.rank}")
        out_f, in_f = w.shape
        if in_f != shape[1]:
            raise ShapeError(
                f"node {node.id!r}: weight expects {in_f} input features, input has {shape[1]}"
            )
        bias = weights.get("bias")
        if bias is not None and bias.shape != (out_f,):
            raise ShapeError(f"node {node.id!r}: bias shape {bias.shape} must be ({out_f},)")
        return (shape[0], out_f)
    if node.kind == "flatten":
        if len(shape) < 2:
            raise ShapeError(f"node {node.id!r}: flatten expects rank >= 2, got shape {shape}")
        n = 1
        for d in shape[1:]:
            n *= d
        return (shape[0], n)
    if node.kind == "softmax":
        expect_rank(shape, 2)
        return shape
    if node.kind == "batchnorm_eval":
        expect_rank(shape, 4)
        c = shape[1]
        for role in ("gamma", "beta", "running_mean", "running_var"):
            if weights[role].shape != (c,):
                raise ShapeError(
                    f"node {node.id!r}: {role} shape {weights[role].shape} must be ({c},)"
                )
        return shape
    if node.kind == "add":
        if input_shapes[0] != input_shapes[1]:
            raise ShapeError(
                f"node {node.id!r}: add inputs must match, got {input_shapes[0]} and {input_shapes[1]}"
            )
        return shape
    if node.kind in ("relu", "identity"):
        return shape
    raise UnsupportedNodeError(f"node {node.id!r}: unsupported kind {node.kind!r}")


def _infer_all_shapes(
    nodes: tuple[NodeSpec, ...],
    input_shape: Shape,
    weights: dict[str, dict[str, Tensor]],
) -> dict[str, Shape]:
    shapes: dict[str, Shape] = {INPUT_ID: input_shape}
    for node in nodes:
        in_shapes = [shapes[ref] for ref in node.inputs]
        shapes[node.id] = _node_output_shape(node, in_shapes, weights.get(node.id, {}))
    del shapes[INPUT_ID]
    return shapes


def infer_shapes(graph: ModelGraph) -> dict[str, Shape]:
    """Recompute the per-node output shapes of a validated graph."""
    return _infer_all_shapes(graph.nodes, graph.input_spec.tensor_shape, graph.weights)


def parse_manifest(manifest_bytes: bytes) -> dict[str, Any]:
    """Decode and structurally validate manifest JSON (no weights yet)."""
    if not manifest_bytes:
        raise ManifestError("manifest is empty")
    try:
        text = manifest_bytes.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ManifestError(f"manifest is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest root must be a JSON object")
    _check_keys(
        doc,
        ("format_version", "name", "task", "input_spec", "nodes", "target_layer"),
        ("class_labels", "output_range"),
        "manifest",
    )
    if doc["format_version"] != 1:
        raise ManifestError(f"unsupported format_version {doc['format_version']!r}")
    if not isinstance(doc["name"], str):
        raise ManifestError("name must be a string")
    if doc["task"] not in (CLASSIFICATION, REGRESSION):
        raise ManifestError(f"task must be {CLASSIFICATION!r} or {REGRESSION!r}, got {doc['task']!r}")
    if not isinstance(doc["target_layer"], str):
        raise ManifestError("target_layer must be a node id string")
    if not isinstance(doc["nodes"], list) or not doc["nodes"]:
        raise ManifestError("nodes must be a nonempty list")
    return doc


def load_model(manifest_bytes: bytes, blob_bytes: bytes) -> ModelGraph:
    """Build a fully validated ModelGraph from manifest and blob bytes.

    All weights are resolved, shapes inferred end-to-end, and the final
    output checked against the declared task before anything is
    returned. Identical bytes always produce a structurally identical
    graph.
    """
    doc = parse_manifest(manifest_bytes)
    if not blob_bytes:
        raise BlobFormatError("blob bytes are empty")
    input_spec = _parse_input_spec(doc["input_spec"])

    task = doc["task"]
    class_labels: tuple[str, ...] | None = None
    output_range: tuple[float, float] | None = None
    if task == CLASSIFICATION:
        if "output_range" in doc:
            raise ManifestError("output_range is only valid for regression models")
        labels = doc.get("class_labels")
        if not (isinstance(labels, list) and len(labels) >= 2 and all(isinstance(v, str) for v in labels)):
            raise ManifestError("classification requires class_labels with at least 2 names")
        class_labels = tuple(labels)
    else:
        if "class_labels" in doc:
            raise ManifestError("class_labels is only valid for classification models")
        rng = doc.get("output_range")
        if not (
            isinstance(rng, list)
            and len(rng) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in rng)
            and float(rng[0]) < float(rng[1])
        ):
            raise ManifestError("regression requires output_range [low, high] with low < high")
        output_range = (float(rng[0]), float(rng[1]))

    seen: set[str] = set()
    nodes: list[NodeSpec] = []
    for i, raw in enumerate(doc["nodes"]):
        node = _parse_node(raw, i, seen)
        seen.add(node.id)
        nodes.append(node)

    target_layer = doc["target_layer"]
    if target_layer not in seen:
        raise GraphValidationError(f"target_layer {target_layer!r} does not name a node")

    store = read_blobs(blob_bytes)
    weights: dict[str, dict[str, Tensor]] = {}
    for node in nodes:
        resolved: dict[str, Tensor] = {}
        for role, ref in node.weight_refs.items():
            if ref not in store:
                raise GraphValidationError(
                    f"node {node.id!r}: weight tensor {ref!r} not found in blob store"
                )
            resolved[role] = store[ref]
        if resolved:
            weights[node.id] = resolved

    node_tuple = tuple(nodes)
    shapes = _infer_all_shapes(node_tuple, input_spec.tensor_shape, weights)

    if len(shapes[target_layer]) != 4:
        raise GraphValidationError(
            f"target_layer {target_layer!r} output has rank {len(shapes[target_layer])}, must be 4"
        )

    return ModelGraph(
        name=doc["name"],
        task=task,
        input_spec=input_spec,
        class_labels=class_labels,
        output_range=output_range,
        nodes=node_tuple,
        weights=weights,
        shapes=shapes,
        target_layer=target_layer,
    )
