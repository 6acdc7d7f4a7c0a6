"""Export configuration and the file-level pipeline."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from .convert import ConversionPlan, convert_model
from .errors import ExportError
from .zoo import SourceMeta, resolve_source, source_names

TARGET_RULES = ("last-conv",)


@dataclass(frozen=True)
class ExportConfig:
    """What to export and where to put it.

    `source` is a registry name or a path to a torch-saved module; file
    sources must supply `input_shape`. The target rule picks the layer
    explanations anchor on; the only implemented rule keeps the last
    convolution, the deepest producer of spatial feature maps.
    """

    source: str
    manifest_path: str
    blob_path: str
    target_rule: str = "last-conv"
    fixture_seed: int = 0
    fixture_count: int = 0
    fixture_dir: Optional[str] = None
    input_shape: Optional[tuple[int, int, int]] = None
    task: str = "classification"
    output_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.target_rule not in TARGET_RULES:
            raise ExportError(f"unknown target rule '{self.target_rule}'; known: {', '.join(TARGET_RULES)}")
        if self.fixture_count < 0:
            raise ExportError("fixture count must be >= 0")


def _load_source(cfg: ExportConfig):
    if cfg.source in source_names():
        return resolve_source(cfg.source)
    if os.path.exists(cfg.source):
        if cfg.input_shape is None:
            raise ExportError(f"file source '{cfg.source}' needs an input shape")
        try:
            model = torch.load(cfg.source, weights_only=False)
        except Exception as exc:
            raise ExportError(f"cannot load '{cfg.source}': {exc}") from exc
        if not isinstance(model, torch.nn.Module):
            raise ExportError(f"'{cfg.source}' does not contain a torch module")
        model.eval()
        meta = SourceMeta(
            name=Path(cfg.source).stem,
            task=cfg.task,
            input_shape=cfg.input_shape,
            output_range=cfg.output_range if cfg.task == "regression" else None,
        )
        return model, meta
    raise ExportError(f"unknown source model '{cfg.source}'; known: {', '.join(source_names())}")


def export_model(cfg: ExportConfig) -> ConversionPlan:
    """Convert the source and write the manifest and blob files."""
    model, meta = _load_source(cfg)
    plan = convert_model(model, meta)
    Path(cfg.manifest_path).write_bytes(plan.manifest)
    Path(cfg.blob_path).write_bytes(plan.blob)
    return plan


def export_fixtures(cfg: ExportConfig, plan: ConversionPlan):
    from .fixtures import write_fixtures

    if cfg.fixture_count == 0:
        return []
    if cfg.fixture_dir is None:
        raise ExportError("fixture output directory required when fixture count > 0")
    return write_fixtures(plan, cfg.fixture_dir, cfg.fixture_seed, cfg.fixture_count)
