"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 model/format error, 3 validation or
numeric failure. Output files are written atomically after all
computation has finished, so a failing run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .cam import (
    DEFAULT_VARIANCE_BOOST,
    contrast_explanation,
    contrast_seed,
    contrast_sweep,
    patch_regression_explanation,
    resolve_target,
    why_explanation,
)
from .engine import forward, predict
from .errors import (
    ContrastCamError,
    ImageFormatError,
    ManifestError,
    ModelError,
    ShapeError,
    TargetError,
    TaskError,
    UsageError,
)
from .gradcheck import DEFAULT_TOLERANCE, check_graph
from .imageio import (
    ImageBuffer,
    RenderSpec,
    decode_image,
    encode_png,
    preprocess_buffer,
    render,
    resize_buffer,
)
from .losses import ContrastTarget, class_target, scalar_target
from .model import ModelGraph, load_model
from .tensor import Tensor, minmax_normalize

WORKERS_ENV = "CONTRASTCAM_WORKERS"


@dataclass(frozen=True)
class Request:
    command: str
    manifest: str
    blobs: str
    image: str | None = None
    reference: str | None = None
    target: str | None = None
    out: str | None = None
    alpha: float = 0.5
    boost: float | None = None
    rectify: bool = True
    stride: int = 4
    average: bool = False
    workers: int = 1
    seed: int = 0


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; route through the usage error path instead
    def error(self, message: str) -> None:
        raise UsageError(message)


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contrastcam", description="Saliency explanations for CNN decisions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def model_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model", dest="manifest", required=True, help="manifest JSON path")
        p.add_argument("--blobs", required=True, help="tensor blob path")

    def render_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--alpha", type=float, default=0.5, help="overlay blend strength in [0,1]")
        p.add_argument("--boost", type=float, default=None, help="value gain applied before rendering")

    p = sub.add_parser("explain", help="class-evidence heatmap for the predicted (or given) class")
    model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--target", help="class name or index; default: predicted class")
    p.add_argument("--out", required=True, help="overlay PNG path")
    render_flags(p)

    p = sub.add_parser("contrast", help="heatmap of what separates the prediction from a target")
    model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--target", required=True, help="contrast class (name or index) or scalar value")
    p.add_argument("--out", required=True)
    p.add_argument("--no-rectify", dest="rectify", action="store_false", help="keep signed map values")
    render_flags(p)

    p = sub.add_parser("sweep", help="mean and variance heatmaps over every contrast class")
    model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="stem PNG path; writes <stem>_mean.png and <stem>_variance.png")
    p.add_argument("--boost", type=float, default=DEFAULT_VARIANCE_BOOST, help="variance gain before normalization")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("iqa", help="patch-wise signed quality map for a regression model")
    model_flags(p)
    p.add_argument("--image", required=True, help="distorted image")
    p.add_argument("--reference", help="pristine reference image for dual-input models")
    p.add_argument("--target", required=True, help="contrast score, inside the model output range")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=4, help="patch step in pixels")
    p.add_argument("--average", action="store_true", help="divide overlaps by coverage")
    p.add_argument("--workers", type=int, default=None)
    render_flags(p)

    p = sub.add_parser("gradcheck", help="compare every node's backward rule to finite differences")
    model_flags(p)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect", help="print the model summary: nodes, shapes, target layer")
    model_flags(p)

    return parser


def parse_request(argv: list[str]) -> Request:
    ns = build_parser().parse_args(argv)
    opts = vars(ns)
    workers = opts.pop("workers", None)
    req = Request(workers=workers if workers is not None else _default_workers(), **opts)
    if req.workers < 1:
        raise UsageError(f"--workers must be >= 1, got {req.workers}")
    if not 0.0 <= req.alpha <= 1.0:
        raise UsageError(f"--alpha must be in [0, 1], got {req.alpha}")
    if req.boost is not None and req.boost <= 0:
        raise UsageError(f"--boost must be > 0, got {req.boost}")
    if req.stride < 1:
        raise UsageError(f"--stride must be >= 1, got {req.stride}")
    return req


def _read_bytes(path: str, error: type[ContrastCamError]) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise error(f"cannot read {path}: {exc}") from exc


def _load_graph(req: Request) -> ModelGraph:
    manifest = _read_bytes(req.manifest, ManifestError)
    blobs = _read_bytes(req.blobs, ManifestError)
    return load_model(manifest, blobs)


def _resolve_cli_target(graph: ModelGraph, raw: str) -> ContrastTarget:
    if graph.is_classification:
        if raw in graph.class_labels:
            return class_target(graph.class_labels.index(raw))
        try:
            idx = int(raw)
        except ValueError:
            raise TargetError(f"unknown class {raw!r}; labels: {', '.join(graph.class_labels)}") from None
        if not 0 <= idx < graph.n_classes:
            raise TargetError(f"class index {idx} outside [0, {graph.n_classes - 1}]")
        return class_target(idx)
    try:
        value = float(raw)
    except ValueError:
        raise TargetError(f"regression target must be a number, got {raw!r}") from None
    lo, hi = graph.output_range
    if not lo <= value <= hi:
        raise TargetError(f"target {value:g} outside output range [{lo:g}, {hi:g}]")
    return scalar_target(value)


def _write_all(outputs: dict[str, bytes]) -> None:
    tmps: list[tuple[str, str]] = []
    try:
        for path, data in outputs.items():
            tmp = f"{path}.tmp{os.getpid()}"
            with open(tmp, "wb") as fh:
                fh.write(data)
            tmps.append((tmp, path))
        for tmp, path in tmps:
            os.replace(tmp, path)
    except OSError:
        for tmp, _ in tmps:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def _class_display(graph: ModelGraph, index: int) -> str:
    return graph.class_labels[index]


def _cmd_explain(req: Request) -> int:
    graph = _load_graph(req)
    if not graph.is_classification:
        raise TaskError("explain requires a classification model")
    img = decode_image(_read_bytes(req.image, ImageFormatError))
    trace = forward(graph, preprocess_buffer(img, graph.input_spec))
    index = None
    if req.target is not None:
        index = _resolve_cli_target(graph, req.target).class_index
    saliency = why_explanation(graph, trace, class_index=index)
    _, h, w = graph.input_spec.shape
    base = resize_buffer(img, h, w)
    spec = RenderSpec(mode="sequential", alpha=req.alpha, boost=req.boost or 1.0)
    _write_all({req.out: encode_png(render(saliency, base, spec))})
    return 0


def _cmd_contrast(req: Request) -> int:
    graph = _load_graph(req)
    img = decode_image(_read_bytes(req.image, ImageFormatError))
    trace = forward(graph, preprocess_buffer(img, graph.input_spec))
    target = _resolve_cli_target(graph, req.target)
    saliency = contrast_explanation(graph, trace, target, rectify=req.rectify)
    seed, _, _ = contrast_seed(graph, trace, target)
    pred = predict(trace)
    if graph.is_classification:
        p_text = _class_display(graph, pred.class_index)
        q_text = _class_display(graph, resolve_target(graph, trace, target).class_index)
        mode = "sequential" if req.rectify else "signed"
    else:
        p_text = f"{pred.value:.6g}"
        q_text = f"{target.value:.6g}"
        mode = "signed"
    _, h, w = graph.input_spec.shape
    base = resize_buffer(img, h, w)
    spec = RenderSpec(mode=mode, alpha=req.alpha, boost=req.boost or 1.0)
    _write_all({req.out: encode_png(render(saliency, base, spec))})
    print(f"P={p_text} Q={q_text} J={seed.loss_value:.6g}")
    return 0


def _sweep_paths(out: str) -> tuple[str, str]:
    stem, ext = os.path.splitext(out)
    ext = ext or ".png"
    return f"{stem}_mean{ext}", f"{stem}_variance{ext}"


def _cmd_sweep(req: Request) -> int:
    graph = _load_graph(req)
    img = decode_image(_read_bytes(req.image, ImageFormatError))
    trace = forward(graph, preprocess_buffer(img, graph.input_spec))
    boost = req.boost if req.boost is not None else DEFAULT_VARIANCE_BOOST
    stats = contrast_sweep(graph, trace, boost=boost, workers=req.workers)
    _, h, w = graph.input_spec.shape
    base = resize_buffer(img, h, w)
    spec = RenderSpec(mode="sequential", alpha=req.alpha)
    mean_norm = dataclasses.replace(
        stats.mean_map, values=minmax_normalize(stats.mean_map.values), normalized=True
    )
    var_norm = dataclasses.replace(
        stats.variance_map, values=minmax_normalize(stats.boosted_variance()), normalized=True
    )
    mean_path, var_path = _sweep_paths(req.out)
    _write_all(
        {
            mean_path: encode_png(render(mean_norm, base, spec)),
            var_path: encode_png(render(var_norm, base, spec)),
        }
    )
    print(f"targets={stats.targets_covered} boost={stats.boost:g}")
    return 0


def _stacked_input(graph: ModelGraph, distorted: ImageBuffer, reference: ImageBuffer) -> Tensor:
    c = graph.input_spec.shape[0]
    if c % 2 != 0:
        raise ShapeError(f"dual-input model needs an even channel count, got {c}")
    if (distorted.height, distorted.width) != (reference.height, reference.width):
        raise ShapeError("reference and distorted images must share dimensions")
    half = c // 2
    spec = graph.input_spec
    ref_spec = dataclasses.replace(
        spec, shape=(half, reference.height, reference.width), mean=spec.mean[:half], std=spec.std[:half]
    )
    dist_spec = dataclasses.replace(
        spec, shape=(half, distorted.height, distorted.width), mean=spec.mean[half:], std=spec.std[half:]
    )
    ref = preprocess_buffer(reference, ref_spec)
    dist = preprocess_buffer(distorted, dist_spec)
    return Tensor(np.concatenate([ref.array, dist.array], axis=1))


def _cmd_iqa(req: Request) -> int:
    graph = _load_graph(req)
    if graph.is_classification:
        raise TaskError("iqa requires a regression model")
    img = decode_image(_read_bytes(req.image, ImageFormatError))
    if req.reference is not None:
        ref = decode_image(_read_bytes(req.reference, ImageFormatError))
        full = _stacked_input(graph, img, ref)
    else:
        spec = dataclasses.replace(graph.input_spec, shape=(graph.input_spec.shape[0], img.height, img.width))
        full = preprocess_buffer(img, spec)
    target = _resolve_cli_target(graph, req.target)
    saliency = patch_regression_explanation(
        graph, full, target, stride=req.stride, average=req.average, workers=req.workers
    )

    ph, pw = graph.input_spec.shape[1], graph.input_spec.shape[2]
    scores = []
    for r in range(0, full.shape[2] - ph + 1, req.stride):
        for cc in range(0, full.shape[3] - pw + 1, req.stride):
            patch = Tensor(full.array[:, :, r : r + ph, cc : cc + pw])
            scores.append(predict(forward(graph, patch)).value)
    score = float(np.mean(np.asarray(scores, dtype=np.float64)))

    spec = RenderSpec(mode="signed", alpha=req.alpha, boost=req.boost or 1.0)
    _write_all({req.out: encode_png(render(saliency, img, spec))})
    print(f"score={score:.6g} patches={len(scores)}")
    return 0


def _cmd_gradcheck(req: Request) -> int:
    graph = _load_graph(req)
    results = check_graph(graph, seed=req.seed)
    worst_by_kind: dict[str, float] = {}
    for r in results:
        worst_by_kind[r.kind] = max(worst_by_kind.get(r.kind, 0.0), r.max_rel_error)
    for kind in sorted(worst_by_kind):
        print(f"{kind}: max_rel_error={worst_by_kind[kind]:.3e}")
    worst = max(worst_by_kind.values(), default=0.0)
    if worst >= DEFAULT_TOLERANCE:
        print(f"FAIL: worst error {worst:.3e} >= {DEFAULT_TOLERANCE:g}", file=sys.stderr)
        return 3
    print(f"ok: worst error {worst:.3e}")
    return 0


def _cmd_inspect(req: Request) -> int:
    graph = _load_graph(req)
    print(f"name: {graph.name}")
    print(f"task: {graph.task}")
    c, h, w = graph.input_spec.shape
    print(f"input: 1x{c}x{h}x{w}")
    if graph.is_classification:
        print(f"classes: {', '.join(graph.class_labels)}")
    else:
        lo, hi = graph.output_range
        print(f"output_range: [{lo:g}, {hi:g}]")
    print(f"target_layer: {graph.target_layer}")
    print(f"nodes ({len(graph.nodes)}):")
    for node in graph.nodes:
        shape = "x".join(str(d) for d in graph.shapes[node.id])
        print(f"  {node.id}: {node.kind} <- {', '.join(node.inputs)} -> {shape}")
    return 0


_COMMANDS = {
    "explain": _cmd_explain,
    "contrast": _cmd_contrast,
    "sweep": _cmd_sweep,
    "iqa": _cmd_iqa,
    "gradcheck": _cmd_gradcheck,
    "inspect": _cmd_inspect,
}


def execute(req: Request) -> int:
    return _COMMANDS[req.command](req)


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        return execute(parse_request(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ModelError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TargetError, TaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ContrastCamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
