"""Model export and parity-fixture generation for the contrastcam engine."""

from .blobio import write_blob
from .config import ExportConfig, export_fixtures, export_model
from .convert import ConversionPlan, convert_model
from .errors import ExportError
from .fixtures import (
    FORWARD_ABS_TOL,
    GRAD_REL_TOL,
    ParityFixture,
    contrast_fixture,
    training_fixture,
    write_fixtures,
)
from .zoo import SourceMeta, resolve_source, source_names

__all__ = [
    "ConversionPlan",
    "ExportConfig",
    "ExportError",
    "FORWARD_ABS_TOL",
    "GRAD_REL_TOL",
    "ParityFixture",
    "SourceMeta",
    "contrast_fixture",
    "convert_model",
    "export_fixtures",
    "export_model",
    "resolve_source",
    "source_names",
    "training_fixture",
    "write_blob",
    "write_fixtures",
]

__version__ = "0.1.0"
