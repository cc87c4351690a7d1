"""Shared fixtures for the export toolkit tests."""

from __future__ import annotations

import pytest
import torch.nn as nn

from export_toolkit.export import export_backbone, export_segmentation
from export_toolkit.spec import ExportSpec


def small_backbone_spec(seed: int = 0) -> ExportSpec:
    """Fast variant for unit tests: same geometry, small feature dim."""
    return ExportSpec(source="reference-backbone", kind="backbone", feature_dim=16, seed=seed)


def tiny_vit_factory() -> nn.Module:
    """Dotted-path factory used by source-resolution tests."""
    from export_toolkit.models import PatchTransformer

    return PatchTransformer(dim=8, heads=2, depth=1, seed=3)


def branchy_factory() -> nn.Module:
    class Branchy(nn.Module):
        def forward(self, x):
            if x.sum() > 0:  # data-dependent control flow cannot be exported
                return x * 2, x.mean(dim=(1, 2, 3))
            return x, x.mean(dim=(1, 2, 3))

    return Branchy()


def not_a_module_factory():
    return 42


@pytest.fixture(scope="session")
def exported_small(tmp_path_factory):
    root = tmp_path_factory.mktemp("exports")
    spec = small_backbone_spec()
    backbone_path = root / "backbone_small.pt2"
    manifest = export_backbone(spec, backbone_path)
    seg_spec = ExportSpec(source="reference-segmenter", kind="segmentation")
    seg_path = root / "segmenter.pt2"
    seg_manifest = export_segmentation(seg_spec, seg_path)
    return {
        "backbone_spec": spec,
        "backbone_path": backbone_path,
        "backbone_manifest": manifest,
        "seg_spec": seg_spec,
        "seg_path": seg_path,
        "seg_manifest": seg_manifest,
    }
