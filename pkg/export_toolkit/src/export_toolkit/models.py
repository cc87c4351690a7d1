"""Model sources: the registry of built-in architectures and factory resolution.

Pretrained weights are plugged in through dotted factory paths
(``package.module:callable``); the built-in entries construct seeded
randomly-initialized networks with the reference geometry, which is what the
shape and parity harnesses need.
"""

from __future__ import annotations

import importlib

import torch
import torch.nn as nn

from .spec import GRID_SIDE, INPUT_SIZE, PATCH_SIZE, ExportSpec, ExportSpecError


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim)
        )

    def forward(self, x):
        h = self.norm1(x)
        attended, _ = self.attn(h, h, h, need_weights=False)
        x = x + attended
        return x + self.mlp(self.norm2(x))


class PatchTransformer(nn.Module):
    """Patch-14 vision transformer emitting (patches, cls token).

    Reference geometry: 336 input, 24x24 grid, class token prepended; depth is
    kept small because the toolkit's harnesses care about signature and export
    fidelity, not accuracy.
    """

    def __init__(self, dim: int = 768, depth: int = 2, heads: int = 12, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.embed = nn.Conv2d(3, dim, kernel_size=PATCH_SIZE, stride=PATCH_SIZE)
        self.cls = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos = nn.Parameter(torch.randn(1, GRID_SIDE * GRID_SIDE + 1, dim) * 0.02)
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, image):
        x = self.embed(image).flatten(2).transpose(1, 2)
        cls = self.cls.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, 1:, :], x[:, 0, :]


class ConvSegmenter(nn.Module):
    """Compact encoder/decoder emitting a single-channel alpha matte."""

    def __init__(self, width: int = 8, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.encode = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.head = nn.Conv2d(width, 1, 1)

    def forward(self, image):
        features = self.encode(image)
        alpha = torch.sigmoid(self.head(features))
        return nn.functional.interpolate(
            alpha, size=(INPUT_SIZE, INPUT_SIZE), mode="bilinear", align_corners=False
        )


def _build_reference_backbone(spec: ExportSpec) -> nn.Module:
    dim = spec.feature_dim or 768
    heads = 12 if dim % 12 == 0 else max(d for d in (1, 2, 4, 8) if dim % d == 0)
    return PatchTransformer(dim=dim, heads=heads, seed=spec.seed)


def _build_reference_segmenter(spec: ExportSpec) -> nn.Module:
    return ConvSegmenter(seed=spec.seed)


REGISTRY = {
    "reference-backbone": _build_reference_backbone,
    "reference-segmenter": _build_reference_segmenter,
}


def resolve_model(spec: ExportSpec) -> nn.Module:
    """Build the source model: registry name or ``module:callable`` factory."""
    if spec.source in REGISTRY:
        model = REGISTRY[spec.source](spec)
    elif ":" in spec.source:
        module_name, _, attr = spec.source.partition(":")
        try:
            factory = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ExportSpecError(f"cannot resolve factory {spec.source!r}: {exc}") from exc
        model = factory()
    else:
        raise ExportSpecError(
            f"unknown source {spec.source!r}; use one of {sorted(REGISTRY)} "
            "or a dotted 'module:callable' factory path"
        )
    if not isinstance(model, nn.Module):
        raise ExportSpecError(f"source {spec.source!r} did not produce a torch module")
    return model.eval()
