"""Attention-map exporter: STRM fixtures from local text-to-video models."""

from .errors import (AdapterError, EnvironmentError_, ExportError, InputError,
                     UsageError)
from .export import (FixtureManifest, ValidationReport, export_attention,
                     validate_fixture)
from .models import MODEL_ZOO, ModelDesc, build_model, resolve_model
from .strm import read_manifest, read_tensor, write_manifest, write_tensor

__version__ = "0.1.0"

__all__ = [
    "AdapterError", "EnvironmentError_", "ExportError", "FixtureManifest",
    "InputError", "MODEL_ZOO", "ModelDesc", "UsageError", "ValidationReport",
    "build_model", "export_attention", "read_manifest", "read_tensor",
    "resolve_model", "validate_fixture", "write_manifest", "write_tensor",
]
