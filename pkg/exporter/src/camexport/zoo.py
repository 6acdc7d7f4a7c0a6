"""Seeded in-code source models.

Every entry builds the same weights on every call (fixed torch seeds),
so exports and fixtures are reproducible without shipping checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch
from torch import nn

from .errors import ExportError


@dataclass(frozen=True)
class SourceMeta:
    name: str
    task: str
    input_shape: tuple[int, int, int]
    class_labels: Optional[tuple[str, ...]] = None
    output_range: Optional[tuple[float, float]] = None


def _tiny_cnn() -> nn.Module:
    torch.manual_seed(41)
    return nn.Sequential(
        nn.Conv2d(1, 4, 3),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(4, 8, 3, padding=1),
        nn.Flatten(),
        nn.Linear(72, 5),
    )


def _vgg_style() -> nn.Module:
    torch.manual_seed(42)
    m = nn.Sequential(
        nn.Conv2d(3, 8, 3, padding=1), nn.BatchNorm2d(8), nn.ReLU(),
        nn.Conv2d(8, 8, 3, padding=1), nn.BatchNorm2d(8), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(8, 16, 3, padding=1), nn.ReLU(),
        nn.Conv2d(16, 16, 3, padding=1), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(),
        nn.Conv2d(32, 32, 3, padding=1), nn.ReLU(),
        nn.Conv2d(32, 32, 3, padding=1), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(512, 64), nn.ReLU(), nn.Dropout(0.5),
        nn.Linear(64, 10),
    )
    # nontrivial eval statistics, as a trained network would have
    g = torch.Generator().manual_seed(43)
    with torch.no_grad():
        for mod in m.modules():
            if isinstance(mod, nn.BatchNorm2d):
                mod.running_mean.copy_(torch.randn(mod.num_features, generator=g) * 0.2)
                mod.running_var.copy_(torch.rand(mod.num_features, generator=g) * 0.5 + 0.75)
    return m


def _patch_reg() -> nn.Module:
    torch.manual_seed(44)
    return nn.Sequential(
        nn.Conv2d(1, 8, 3, padding=1), nn.ReLU(),
        nn.Conv2d(8, 8, 3, padding=1), nn.ReLU(),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Linear(8, 1),
    )


def _broken_rnn() -> nn.Module:
    torch.manual_seed(45)
    return nn.Sequential(
        nn.Conv2d(1, 2, 3),
        nn.Flatten(),
        nn.LSTM(8, 4),
    )


_ENTRIES: dict[str, tuple[SourceMeta, Callable[[], nn.Module]]] = {
    "tiny-cnn": (
        SourceMeta("tiny-cnn", "classification", (1, 8, 8), class_labels=("a", "b", "c", "d", "e")),
        _tiny_cnn,
    ),
    "vgg-style": (
        SourceMeta("vgg-style", "classification", (3, 32, 32), class_labels=tuple(f"c{i}" for i in range(10))),
        _vgg_style,
    ),
    "patch-reg": (
        SourceMeta("patch-reg", "regression", (1, 16, 16), output_range=(-4.0, 4.0)),
        _patch_reg,
    ),
    "broken-rnn": (
        SourceMeta("broken-rnn", "classification", (1, 8, 8), class_labels=("a", "b", "c", "d")),
        _broken_rnn,
    ),
}


def source_names() -> tuple[str, ...]:
    return tuple(_ENTRIES)


def resolve_source(name: str) -> tuple[nn.Module, SourceMeta]:
    if name not in _ENTRIES:
        raise ExportError(f"unknown source model '{name}'; known: {', '.join(_ENTRIES)}")
    meta, build = _ENTRIES[name]
    model = build()
    model.eval()
    return model, meta
