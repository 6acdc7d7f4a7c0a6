"""Numerical parity fixtures.

Each fixture freezes one seeded input together with the source
framework's forward output and the gradient of the contrast loss at the
designated layer, so an independent engine can be checked against the
framework that trained the weights. Tensors go into the binary blob
container; bookkeeping goes into a JSON sidecar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F

from .blobio import write_blob
from .convert import ConversionPlan

FORWARD_ABS_TOL = 1e-4
GRAD_REL_TOL = 1e-3


@dataclass(frozen=True)
class ParityFixture:
    seed: int
    task: str
    target: Union[int, float]
    prediction: Union[int, float]
    loss: float
    target_layer: str
    input: np.ndarray
    output: np.ndarray
    target_grad: np.ndarray

    def blob_bytes(self) -> bytes:
        return write_blob(
            {"input": self.input, "output": self.output, "target_grad": self.target_grad}
        )

    def meta_bytes(self) -> bytes:
        doc = {
            "format_version": 1,
            "seed": self.seed,
            "task": self.task,
            "target": self.target,
            "prediction": self.prediction,
            "loss": self.loss,
            "target_layer": self.target_layer,
            "tolerances": {"forward_abs": FORWARD_ABS_TOL, "grad_rel": GRAD_REL_TOL},
        }
        return json.dumps(doc, indent=2).encode("utf-8")


def _traced_forward(plan: ConversionPlan, x: torch.Tensor):
    captured = {}

    def hook(_mod, _inp, out):
        out.retain_grad()
        captured["act"] = out

    handle = plan.target_module.register_forward_hook(hook)
    try:
        out = plan.model(x)
    finally:
        handle.remove()
    return out, captured["act"]


def _finish(plan, seed, x, out, act, loss, target, prediction) -> ParityFixture:
    loss.backward()
    return ParityFixture(
        seed=seed,
        task=plan.meta.task,
        target=target,
        prediction=prediction,
        loss=float(loss.detach()),
        target_layer=plan.target_layer,
        input=x.detach().numpy().astype(np.float32),
        output=out.detach().numpy().astype(np.float32).reshape(-1),
        target_grad=act.grad.detach().numpy().astype(np.float32),
    )


def _seeded_input(plan: ConversionPlan, seed: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return torch.randn(1, *plan.meta.input_shape, generator=g)


def contrast_fixture(plan: ConversionPlan, seed: int, self_contrast: bool = False) -> ParityFixture:
    """Gradient of the contrast loss between the prediction and a foil."""
    x = _seeded_input(plan, seed)
    out, act = _traced_forward(plan, x)
    if plan.meta.task == "classification":
        p = int(out.detach().argmax())
        q = p if self_contrast else (p + 1) % out.shape[1]
        loss = F.cross_entropy(out, torch.tensor([q]))
        return _finish(plan, seed, x, out, act, loss, q, p)
    y = out.reshape(())
    p = float(y.detach())
    lo, hi = plan.meta.output_range or (0.0, 1.0)
    q = p if self_contrast else (lo + hi) / 2.0
    loss = (y - q) ** 2
    return _finish(plan, seed, x, out, act, loss, q, p)


def training_fixture(plan: ConversionPlan, seed: int) -> ParityFixture:
    """Gradient of the ordinary training loss at the predicted label."""
    if plan.meta.task != "classification":
        raise ValueError("training fixtures are defined for classification models")
    x = _seeded_input(plan, seed)
    out, act = _traced_forward(plan, x)
    p = int(out.detach().argmax())
    loss = F.cross_entropy(out, torch.tensor([p]))
    return _finish(plan, seed, x, out, act, loss, p, p)


def write_fixtures(plan: ConversionPlan, directory, seed: int, count: int) -> list[tuple[Path, Path]]:
    """Emit `count` fixtures with distinct consecutive seeds."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(count):
        fixture = contrast_fixture(plan, seed + i)
        stem = directory / f"{plan.meta.name}_{fixture.seed:04d}"
        meta_path = stem.with_suffix(".json")
        blob_path = stem.with_suffix(".bin")
        meta_path.write_bytes(fixture.meta_bytes())
        blob_path.write_bytes(fixture.blob_bytes())
        written.append((meta_path, blob_path))
    return written
