"""Per-node verification of the backward rules against central
finite differences.

Each node is checked in isolation: random inputs, a random seed on the
output, analytic input gradients from node_vjp, and numeric gradients
through node_forward only. Coordinates too close to a kink (ReLU zero
crossings, near-tied max-pool windows) are skipped rather than sampled
around, so a clean implementation reports errors near float32 noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import finite_diff_gradient, node_forward, node_vjp, relative_error
from .model import INPUT_ID, ModelGraph, NodeSpec
from .tensor import Shape, Tensor

DEFAULT_EPS = 2e-3
DEFAULT_TOLERANCE = 1e-3
DEFAULT_MAX_COORDS = 64

RELU_MARGIN = 0.01
POOL_GAP_MARGIN = 0.02


@dataclass(frozen=True)
class GradcheckResult:
    node_id: str
    kind: str
    max_rel_error: float
    coords_checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < DEFAULT_TOLERANCE


def _sample_input(rng: np.random.Generator, shape: Shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape).astype(np.float32))


def _safe_relu_coords(x: np.ndarray, coords: list[int]) -> list[int]:
    flat = x.reshape(-1)
    return [i for i in coords if abs(float(flat[i])) > RELU_MARGIN]


def _safe_maxpool_coords(x: np.ndarray, coords: list[int], k: int, stride: int, padding: int) -> list[int]:
    # keep a coordinate only if every window containing it is decided by
    # a clear margin, so a +-eps nudge cannot change the argmax
    _, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    xp = np.full((c, hp, wp), -np.inf, dtype=np.float64)
    xp[:, padding : padding + h, padding : padding + w] = x[0]
    safe = []
    for idx in coords:
        ch, rem = divmod(idx, h * w)
        r, col = divmod(rem, w)
        rp, cp = r + padding, col + padding
        ok = True
        for oi in range(ho):
            if not (oi * stride <= rp < oi * stride + k):
                continue
            for oj in range(wo):
                if not (oj * stride <= cp < oj * stride + k):
                    continue
                win = xp[ch, oi * stride : oi * stride + k, oj * stride : oj * stride + k]
                top2 = np.sort(win.reshape(-1))[-2:]
                if top2[1] - top2[0] < POOL_GAP_MARGIN:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            safe.append(idx)
    return safe


def check_node(
    graph: ModelGraph,
    node: NodeSpec,
    rng: np.random.Generator,
    eps: float = DEFAULT_EPS,
    max_coords: int = DEFAULT_MAX_COORDS,
) -> GradcheckResult:
    """Compare node_vjp against finite differences for one node."""
    in_shapes = [graph.input_spec.tensor_shape if ref == INPUT_ID else graph.shapes[ref] for ref in node.inputs]
    inputs = [_sample_input(rng, s) for s in in_shapes]
    weights = graph.weights.get(node.id)
    output = node_forward(node, inputs, weights)
    seed = Tensor(rng.standard_normal(output.shape).astype(np.float32))
    analytic = node_vjp(node, seed, inputs, output, weights)
    seed64 = seed.array.astype(np.float64)

    worst = 0.0
    checked = 0
    for pos, ref_input in enumerate(inputs):
        size = ref_input.array.size
        if size <= max_coords:
            coords = list(range(size))
        else:
            coords = sorted(int(i) for i in rng.choice(size, size=max_coords, replace=False))
        if node.kind == "relu":
            coords = _safe_relu_coords(ref_input.array, coords)
        elif node.kind == "maxpool2d":
            coords = _safe_maxpool_coords(
                ref_input.array, coords, node.params["kernel_size"], node.params["stride"], node.params["padding"]
            )
        if not coords:
            continue

        def scalar(x: Tensor, pos: int = pos) -> float:
            probe = list(inputs)
            probe[pos] = x
            out = node_forward(node, probe, weights)
            return float((out.array.astype(np.float64) * seed64).sum())

        numeric = finite_diff_gradient(scalar, ref_input, eps, coords=coords)
        a = analytic[pos].array.reshape(-1)[coords]
        b = numeric.array.reshape(-1)[coords]
        worst = max(worst, relative_error(a, b))
        checked += len(coords)
    return GradcheckResult(node_id=node.id, kind=node.kind, max_rel_error=worst, coords_checked=checked)


def check_graph(
    graph: ModelGraph,
    seed: int = 0,
    eps: float = DEFAULT_EPS,
    max_coords: int = DEFAULT_MAX_COORDS,
) -> list[GradcheckResult]:
    """Run check_node over every node of the graph, deterministically."""
    rng = np.random.default_rng(seed)
    return [check_node(graph, node, rng, eps=eps, max_coords=max_coords) for node in graph.nodes]
