"""PyTorch layer walk producing manifest JSON plus weight blob.

Supports sequential topologies built from the node kinds the engine
executes. Dropout layers vanish (inference no-ops), batchnorm is
emitted with its frozen eval statistics, and anything unconvertible
raises an error naming the offending layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import torch
from torch import nn

from .blobio import write_blob
from .errors import ExportError
from .zoo import SourceMeta

_ID_PREFIX = {
    "conv2d": "conv",
    "batchnorm_eval": "bn",
    "relu": "relu",
    "maxpool2d": "mp",
    "avgpool2d": "ap",
    "global_avgpool": "gap",
    "flatten": "flat",
    "linear": "fc",
    "softmax": "sm",
    "identity": "id",
}


@dataclass
class ConversionPlan:
    """Everything downstream steps need about one converted model."""

    meta: SourceMeta
    manifest: bytes
    blob: bytes
    target_layer: str
    target_module: nn.Module
    model: nn.Module
    node_modules: dict[str, nn.Module] = field(default_factory=dict)


def _leaves(module: nn.Module, prefix: str = "") -> Iterator[tuple[str, nn.Module]]:
    children = list(module.named_children())
    if not children:
        yield prefix or type(module).__name__, module
        return
    for name, child in children:
        yield from _leaves(child, f"{prefix}.{name}" if prefix else name)


def _square(value, layer: str, what: str) -> int:
    if isinstance(value, (tuple, list)):
        if len(set(value)) != 1:
            raise ExportError(f"layer '{layer}': non-square {what} {tuple(value)}")
        return int(value[0])
    return int(value)


def _np(param) -> np.ndarray:
    return param.detach().cpu().numpy().astype(np.float32, copy=True)


def _convert_leaf(layer: str, mod: nn.Module):
    """Return (kind, params, weights) for one layer, or None to drop it."""
    if isinstance(mod, (nn.Dropout, nn.Dropout1d, nn.Dropout2d)):
        return None
    if isinstance(mod, nn.Conv2d):
        if mod.groups != 1:
            raise ExportError(f"layer '{layer}': grouped convolution (groups={mod.groups})")
        if _square(mod.dilation, layer, "dilation") != 1:
            raise ExportError(f"layer '{layer}': dilated convolution")
        if mod.padding_mode != "zeros":
            raise ExportError(f"layer '{layer}': padding mode '{mod.padding_mode}'")
        kernel = _square(mod.kernel_size, layer, "kernel")
        weights = {"weight": _np(mod.weight)}
        if mod.bias is not None:
            weights["bias"] = _np(mod.bias)
        params = {
            "kernel_size": kernel,
            "stride": _square(mod.stride, layer, "stride"),
            "padding": _square(mod.padding, layer, "padding"),
        }
        return "conv2d", params, weights
    if isinstance(mod, nn.BatchNorm2d):
        if mod.running_mean is None or mod.running_var is None:
            raise ExportError(f"layer '{layer}': batchnorm without tracked eval statistics")
        n = mod.num_features
        weights = {
            "gamma": _np(mod.weight) if mod.affine else np.ones(n, dtype=np.float32),
            "beta": _np(mod.bias) if mod.affine else np.zeros(n, dtype=np.float32),
            "running_mean": _np(mod.running_mean),
            "running_var": _np(mod.running_var),
        }
        return "batchnorm_eval", {"epsilon": float(mod.eps)}, weights
    if isinstance(mod, nn.ReLU):
        return "relu", {}, {}
    if isinstance(mod, nn.MaxPool2d):
        if mod.ceil_mode or mod.return_indices:
            raise ExportError(f"layer '{layer}': unsupported maxpool options")
        if _square(mod.dilation, layer, "dilation") != 1:
            raise ExportError(f"layer '{layer}': dilated maxpool")
        kernel = _square(mod.kernel_size, layer, "kernel")
        stride = kernel if mod.stride is None else _square(mod.stride, layer, "stride")
        params = {"kernel_size": kernel, "stride": stride, "padding": _square(mod.padding, layer, "padding")}
        return "maxpool2d", params, {}
    if isinstance(mod, nn.AvgPool2d):
        if mod.ceil_mode or not mod.count_include_pad or mod.divisor_override:
            raise ExportError(f"layer '{layer}': unsupported avgpool options")
        kernel = _square(mod.kernel_size, layer, "kernel")
        stride = kernel if mod.stride is None else _square(mod.stride, layer, "stride")
        params = {"kernel_size": kernel, "stride": stride, "padding": _square(mod.padding, layer, "padding")}
        return "avgpool2d", params, {}
    if isinstance(mod, nn.AdaptiveAvgPool2d):
        size = mod.output_size
        if size not in (1, (1, 1)):
            raise ExportError(f"layer '{layer}': adaptive pooling to {size}, only 1x1 converts")
        return "global_avgpool", {}, {}
    if isinstance(mod, nn.Flatten):
        if mod.start_dim != 1 or mod.end_dim != -1:
            raise ExportError(f"layer '{layer}': partial flatten")
        return "flatten", {}, {}
    if isinstance(mod, nn.Linear):
        weights = {"weight": _np(mod.weight)}
        if mod.bias is not None:
            weights["bias"] = _np(mod.bias)
        return "linear", {}, weights
    if isinstance(mod, nn.Softmax):
        if mod.dim not in (1, -1):
            raise ExportError(f"layer '{layer}': softmax over dim {mod.dim}")
        return "softmax", {}, {}
    if isinstance(mod, nn.Identity):
        return "identity", {}, {}
    raise ExportError(f"unsupported layer '{layer}' ({type(mod).__name__})")


def convert_model(model: nn.Module, meta: SourceMeta) -> ConversionPlan:
    model.eval()
    counters: dict[str, int] = {}
    nodes = []
    tensors: dict[str, np.ndarray] = {}
    node_modules: dict[str, nn.Module] = {}
    target: Optional[str] = None
    target_module: Optional[nn.Module] = None
    prev = "input"

    for layer_name, mod in _leaves(model):
        converted = _convert_leaf(layer_name, mod)
        if converted is None:
            continue
        kind, params, weights = converted
        counters[kind] = counters.get(kind, 0) + 1
        node_id = f"{_ID_PREFIX[kind]}{counters[kind]}"
        entry: dict = {"id": node_id, "kind": kind, "inputs": [prev]}
        if params:
            entry["params"] = params
        if weights:
            refs = {}
            for role, arr in weights.items():
                ref = f"{node_id}.{role}"
                refs[role] = ref
                tensors[ref] = arr
            entry["weight_refs"] = refs
        nodes.append(entry)
        node_modules[node_id] = mod
        if kind == "conv2d":
            target, target_module = node_id, mod
        prev = node_id

    if not nodes:
        raise ExportError("model has no convertible layers")
    if target is None:
        raise ExportError("no convolutional layer to anchor the explanation on")

    c = meta.input_shape[0]
    doc: dict = {
        "format_version": 1,
        "name": meta.name,
        "task": meta.task,
        "input_spec": {"shape": list(meta.input_shape), "mean": [0.0] * c, "std": [1.0] * c},
        "nodes": nodes,
        "target_layer": target,
    }
    if meta.task == "classification":
        labels = meta.class_labels
        if labels is None:
            out = nodes[-1]
            width = int(tensors[f"{out['id']}.weight"].shape[0]) if out["kind"] == "linear" else 0
            labels = tuple(f"class{i}" for i in range(width))
        doc["class_labels"] = list(labels)
    else:
        doc["output_range"] = list(meta.output_range or (0.0, 1.0))

    manifest = json.dumps(doc, indent=2).encode("utf-8")
    return ConversionPlan(
        meta=meta,
        manifest=manifest,
        blob=write_blob(tensors),
        target_layer=target,
        target_module=target_module,
        model=model,
        node_modules=node_modules,
    )
