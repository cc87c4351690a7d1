"""Export toolkit: turn patch-feature backbones and segmentation networks into
fixed-signature graph files, with numeric parity verification."""

__version__ = "0.1.0"

from .export import ExportError, build_wrapped_model, export_backbone, export_segmentation
from .parity import ParityError, ParityReport, assert_deterministic, verify_parity
from .spec import ExportSpec, ExportSpecError

__all__ = [
    "ExportError",
    "ExportSpec",
    "ExportSpecError",
    "ParityError",
    "ParityReport",
    "assert_deterministic",
    "build_wrapped_model",
    "export_backbone",
    "export_segmentation",
    "verify_parity",
]
