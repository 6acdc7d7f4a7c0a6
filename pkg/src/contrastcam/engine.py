"""Forward execution with activation caching, and reverse-mode
vector-Jacobian products from the output back to a chosen layer.

Only gradients with respect to activations are ever formed; weight
gradients are never materialized. All forward kernels are deterministic:
reductions follow a fixed order, ReLU's subgradient at exactly 0 is 0,
and max pooling routes ties to the first position in row-major window
order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphValidationError, ShapeError, TaskError
from .model import INPUT_ID, ModelGraph, NodeSpec
from .tensor import Tensor


@dataclass(frozen=True)
class ForwardTrace:
    """Cached per-node activations for a single input."""

    graph: ModelGraph
    activations: dict[str, Tensor]  # node id (and "input") -> output

    @property
    def output(self) -> np.ndarray:
        """Final node output, flattened to a float32 vector."""
        return self.activations[self.graph.nodes[-1].id].array.reshape(-1)

    def activation(self, node_id: str) -> Tensor:
        try:
            return self.activations[node_id]
        except KeyError:
            raise GraphValidationError(f"unknown layer id {node_id!r}") from None


@dataclass(frozen=True)
class Prediction:
    """Argmax class (classification) or regressed scalar (regression)."""

    score: float
    class_index: int | None = None
    value: float | None = None


def _pad4(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (1, C, Ho, Wo, k, k) view over the (possibly padded) input
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, padding: int) -> np.ndarray:
    out_c = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    xp = _pad4(x, padding)
    win = _windows(xp, kh, stride)
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(ho * wo, -1)
    out = cols @ w.reshape(out_c, -1).T
    if b is not None:
        out = out + b
    return np.ascontiguousarray(out.T).reshape(1, out_c, ho, wo)


def _conv2d_vjp(g: np.ndarray, w: np.ndarray, stride: int, padding: int, in_shape: tuple[int, ...]) -> np.ndarray:
    out_c, in_c, kh, kw = w.shape
    _, _, h, wdt = in_shape
    ho, wo = g.shape[2], g.shape[3]
    gm = np.ascontiguousarray(g.reshape(out_c, ho * wo).T)
    dcols = (gm @ w.reshape(out_c, -1)).reshape(ho, wo, in_c, kh, kw)
    dxp = np.zeros((1, in_c, h + 2 * padding, wdt + 2 * padding), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            dxp[0, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, i, j].transpose(2, 0, 1)
    if padding:
        dxp = dxp[:, :, padding : padding + h, padding : padding + wdt]
    return np.ascontiguousarray(dxp)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z64 = z.astype(np.float64)
    e = np.exp(z64 - z64.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def node_forward(node: NodeSpec, inputs: Sequence[Tensor], weights: Mapping[str, Tensor] | None = None) -> Tensor:
    """Evaluate one node on explicit inputs. Standard inference semantics."""
    weights = weights or {}
    xs = [t.array for t in inputs]
    x = xs[0]
    kind = node.kind

    def need_rank(rank: int) -> None:
        if x.ndim != rank:
            raise ShapeError(f"node {node.id!r}: kind {kind!r} expects rank-{rank} input, got rank {x.ndim}")

    if kind == "conv2d":
        need_rank(4)
        w = weights["weight"].array
        b = weights["bias"].array if "bias" in weights else None
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"node {node.id!r}: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
        out = _conv2d_forward(x, w, b, node.params["stride"], node.params["padding"])
    elif kind == "relu":
        out = np.maximum(x, np.float32(0.0))
    elif kind == "maxpool2d":
        need_rank(4)
        win = _windows(_pad4(x, node.params["padding"], -np.inf), node.params["kernel_size"], node.params["stride"])
        out = win.max(axis=(4, 5)).astype(np.float32)
    elif kind == "avgpool2d":
        need_rank(4)
        win = _windows(_pad4(x, node.params["padding"]), node.params["kernel_size"], node.params["stride"])
        out = win.mean(axis=(4, 5), dtype=np.float64).astype(np.float32)
    elif kind == "global_avgpool":
        need_rank(4)
        out = x.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(np.float32)
    elif kind == "linear":
        need_rank(2)
        w = weights["weight"].array
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"node {node.id!r}: input has {x.shape[1]} features, weight expects {w.shape[1]}")
        out = x @ w.T
        if "bias" in weights:
            out = out + weights["bias"].array
    elif kind == "flatten":
        out = x.reshape(x.shape[0], -1)
    elif kind == "softmax":
        need_rank(2)
        out = _softmax_rows(x)
    elif kind == "batchnorm_eval":
        need_rank(4)
        gamma = weights["gamma"].array
        beta = weights["beta"].array
        mean = weights["running_mean"].array
        var = weights["running_var"].array
        scale = gamma / np.sqrt(var + np.float32(node.params["epsilon"]))
        shift = beta - mean * scale
        out = x * scale[None, :, None, None] + shift[None, :, None, None]
    elif kind == "add":
        if xs[0].shape != xs[1].shape:
            raise ShapeError(f"node {node.id!r}: add inputs {xs[0].shape} and {xs[1].shape} differ")
        out = xs[0] + xs[1]
    elif kind == "identity":
        out = x
    else:
        raise GraphValidationError(f"node {node.id!r}: unsupported kind {kind!r}")
    return Tensor(np.ascontiguousarray(out, dtype=np.float32))


def node_vjp(
    node: NodeSpec,
    upstream: Tensor,
    inputs: Sequence[Tensor],
    output: Tensor,
    weights: Mapping[str, Tensor] | None = None,
) -> tuple[Tensor, ...]:
    """Gradient of a seeded scalar w.r.t. each node input, given the
    gradient w.r.t. the node output and the cached forward tensors."""
    weights = weights or {}
    g = upstream.array
    if g.shape != output.shape:
        raise ShapeError(
            f"node {node.id!r}: upstream gradient shape {g.shape} does not match output shape {output.shape}"
        )
    x = inputs[0].array
    kind = node.kind

    if kind == "conv2d":
        w = weights["weight"].array
        dx = _conv2d_vjp(g, w, node.params["stride"], node.params["padding"], x.shape)
        return (Tensor(dx),)
    if kind == "relu":
        return (Tensor(np.where(x > 0, g, np.float32(0.0))),)
    if kind == "maxpool2d":
        k = node.params["kernel_size"]
        stride = node.params["stride"]
        padding = node.params["padding"]
        xp = _pad4(x, padding, -np.inf)
        win = _windows(xp, k, stride)
        n, c, ho, wo = win.shape[:4]
        idx = win.reshape(n, c, ho, wo, k * k).argmax(axis=-1)  # first max, row-major
        hp, wp = xp.shape[2], xp.shape[3]
        rows = idx // k + (np.arange(ho, dtype=np.int64) * stride).reshape(1, 1, ho, 1)
        cols = idx % k + (np.arange(wo, dtype=np.int64) * stride).reshape(1, 1, 1, wo)
        chan = np.arange(c, dtype=np.int64).reshape(1, c, 1, 1)
        flat = (chan * hp + rows) * wp + cols
        acc = np.zeros(c * hp * wp, dtype=np.float32)
        np.add.at(acc, flat.ravel(), g.ravel())
        dxp = acc.reshape(1, c, hp, wp)
        if padding:
            dxp = dxp[:, :, padding : padding + x.shape[2], padding : padding + x.shape[3]]
        return (Tensor(np.ascontiguousarray(dxp)),)
    if kind == "avgpool2d":
        k = node.params["kernel_size"]
        stride = node.params["stride"]
        padding = node.params["padding"]
        ho, wo = g.shape[2], g.shape[3]
        gdiv = g / np.float32(k * k)
        dxp = np.zeros((1, x.shape[1], x.shape[2] + 2 * padding, x.shape[3] + 2 * padding), dtype=np.float32)
        for i in range(k):
            for j in range(k):
                dxp[0, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gdiv[0]
        if padding:
            dxp = dxp[:, :, padding : padding + x.shape[2], padding : padding + x.shape[3]]
        return (Tensor(np.ascontiguousarray(dxp)),)
    if kind == "global_avgpool":
        n = x.shape[2] * x.shape[3]
        dx = np.broadcast_to(g / np.float32(n), x.shape)
        return (Tensor(np.ascontiguousarray(dx)),)
    if kind == "linear":
        w = weights["weight"].array
        return (Tensor(g @ w),)
    if kind == "flatten":
        return (Tensor(g.reshape(x.shape)),)
    if kind == "softmax":
        s = output.array.astype(np.float64)
        g64 = g.astype(np.float64)
        inner = (g64 * s).sum(axis=-1, keepdims=True)
        return (Tensor((s * (g64 - inner)).astype(np.float32)),)
    if kind == "batchnorm_eval":
        gamma = weights["gamma"].array
        var = weights["running_var"].array
        scale = gamma / np.sqrt(var + np.float32(node.params["epsilon"]))
        return (Tensor(g * scale[None, :, None, None]),)
    if kind == "add":
        return (Tensor(g.copy()), Tensor(g.copy()))
    if kind == "identity":
        return (Tensor(g.copy()),)
    raise GraphValidationError(f"node {node.id!r}: unsupported kind {kind!r}")


def forward(graph: ModelGraph, input_tensor: Tensor) -> ForwardTrace:
    """Run the whole graph once, caching every node's output."""
    expected = graph.input_spec.tensor_shape
    if input_tensor.shape != expected:
        raise ShapeError(f"input shape {input_tensor.shape} does not match model input {expected}")
    acts: dict[str, Tensor] = {INPUT_ID: input_tensor}
    for node in graph.nodes:
        ins = [acts[ref] for ref in node.inputs]
        try:
            acts[node.id] = node_forward(node, ins, graph.weights.get(node.id))
        except ShapeError:
            raise
        except KeyError as exc:
            raise GraphValidationError(f"node {node.id!r}: missing weight {exc}") from exc
    return ForwardTrace(graph=graph, activations=acts)


def predict(trace: ForwardTrace) -> Prediction:
    """Argmax with lowest-index tie-break, or the regressed scalar."""
    y = trace.output
    if trace.graph.is_classification:
        n = trace.graph.n_classes
        if y.shape != (n,):
            raise TaskError(f"classification output must be a length-{n} vector, got shape {y.shape}")
        idx = int(np.argmax(y))
        return Prediction(score=float(y[idx]), class_index=idx)
    if y.size != 1:
        raise TaskError(f"regression output must be a scalar, got {y.size} values")
    value = float(y[0])
    return Prediction(score=value, value=value)


def _downstream_of(graph: ModelGraph, layer: str) -> set[str]:
    desc = {layer}
    for node in graph.nodes:
        if node.id in desc:
            continue
        if any(ref in desc for ref in node.inputs):
            desc.add(node.id)
    return desc


def logits_node_id(graph: ModelGraph) -> str:
    """Node producing the pre-softmax output: the final node, or the node
    feeding a terminal softmax."""
    final = graph.nodes[-1]
    if final.kind == "softmax":
        return final.inputs[0]
    return final.id


def backward_to_layer(trace: ForwardTrace, output_grad: Tensor, layer: str, at: str | None = None) -> Tensor:
    """Gradient of the seeded scalar w.r.t. the named layer's output.

    ``output_grad`` is injected at node ``at`` (default: the final node)
    and propagated backward. Nodes that do not lie on a path between
    ``layer`` and ``at`` are never visited, and no weight gradients are
    formed. A gradient may be given flattened; it is reshaped to the
    injection node's output shape.
    """
    graph = trace.graph
    target_out = trace.activation(layer)
    at_id = at if at is not None else graph.nodes[-1].id
    at_shape = trace.activation(at_id).shape
    g = output_grad.array
    if g.size != int(np.prod(at_shape)):
        raise ShapeError(
            f"output gradient has {g.size} values, node {at_id!r} output has shape {at_shape}"
        )
    g = g.reshape(at_shape)

    desc = _downstream_of(graph, layer)
    if at_id not in desc:
        return Tensor(np.zeros(target_out.shape, dtype=np.float32))
    if at_id == layer:
        return Tensor(np.ascontiguousarray(g, dtype=np.float32))

    order = {node.id: i for i, node in enumerate(graph.nodes)}
    grads: dict[str, np.ndarray] = {at_id: np.ascontiguousarray(g, dtype=np.float32)}
    for node in reversed(graph.nodes[: order[at_id] + 1]):
        if node.id == layer or node.id not in grads:
            continue
        ins = [trace.activations[ref] for ref in node.inputs]
        in_grads = node_vjp(node, Tensor(grads.pop(node.id)), ins, trace.activations[node.id], graph.weights.get(node.id))
        for ref, ig in zip(node.inputs, in_grads):
            if ref not in desc:
                continue  # branch cannot reach the layer
            if ref in grads:
                grads[ref] = grads[ref] + ig.array
            else:
                grads[ref] = ig.array
    return Tensor(grads[layer])


def forward_from(trace: ForwardTrace, layer: str, activation: Tensor) -> np.ndarray:
    """Re-run only the nodes downstream of ``layer`` with its output
    replaced, reusing cached activations everywhere else. Returns the
    final output vector.

    This is the independent path used to check backward_to_layer: it
    shares no code with the VJP rules.
    """
    graph = trace.graph
    if activation.shape != trace.activation(layer).shape:
        raise ShapeError(
            f"replacement activation shape {activation.shape} does not match layer {layer!r} "
            f"shape {trace.activation(layer).shape}"
        )
    desc = _downstream_of(graph, layer)
    acts: dict[str, Tensor] = {layer: activation}

    def lookup(ref: str) -> Tensor:
        if ref in acts:
            return acts[ref]
        return trace.activations[ref]

    for node in graph.nodes:
        if node.id not in desc or node.id == layer:
            continue
        ins = [lookup(ref) for ref in node.inputs]
        acts[node.id] = node_forward(node, ins, graph.weights.get(node.id))
    final = graph.nodes[-1].id
    return lookup(final).array.reshape(-1)


def finite_diff_gradient(
    scalar_fn: Callable[[Tensor], float],
    point: Tensor,
    eps: float,
    coords: Iterable[int] | None = None,
) -> Tensor:
    """Central-difference gradient of ``scalar_fn`` at ``point``.

    Differences are formed in 64-bit using the actually-achieved float32
    step per coordinate. ``coords`` restricts evaluation to a subset of
    flat indices (other entries stay 0).
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    base = point.array.reshape(-1)
    out = np.zeros(base.size, dtype=np.float64)
    indices = range(base.size) if coords is None else list(coords)
    for i in indices:
        xp = base.copy()
        xm = base.copy()
        xp[i] = np.float32(float(base[i]) + eps)
        xm[i] = np.float32(float(base[i]) - eps)
        step = float(xp[i]) - float(xm[i])
        fp = float(scalar_fn(Tensor(xp.reshape(point.shape))))
        fm = float(scalar_fn(Tensor(xm.reshape(point.shape))))
        out[i] = (fp - fm) / step
    return Tensor(out.astype(np.float32).reshape(point.shape))


def relative_error(a: np.ndarray | Tensor, b: np.ndarray | Tensor) -> float:
    """Max-norm relative disagreement: ||a-b||_inf / max(||a||_inf, ||b||_inf)."""
    aa = a.array if isinstance(a, Tensor) else np.asarray(a)
    bb = b.array if isinstance(b, Tensor) else np.asarray(b)
    denom = max(float(np.abs(aa).max(initial=0.0)), float(np.abs(bb).max(initial=0.0)), 1e-12)
    return float(np.abs(aa.astype(np.float64) - bb.astype(np.float64)).max(initial=0.0)) / denom
