"""Shared fixtures: tiny exported graph engines and synthetic catalogs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from objsim.catalog import LIGHTINGS, N_POSES, N_SCENES, Catalog, ImageRef, Studio, Wild


class TinyBackbone(torch.nn.Module):
    """Patch-conv stand-in with positional parameters tied to the input size."""

    def __init__(self, dim: int = 8, seed: int = 0, input_size: int = 336, stride: int = 14):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.proj = torch.nn.Conv2d(3, dim, kernel_size=14, stride=stride)
        with torch.no_grad():
            self.proj.weight.copy_(torch.randn(self.proj.weight.shape, generator=gen) * 0.2)
            self.proj.bias.copy_(torch.randn(self.proj.bias.shape, generator=gen) * 0.1)
        side = (input_size - 14) // stride + 1
        self.pos = torch.nn.Parameter(
            torch.randn(1, side * side, dim, generator=gen) * 0.05
        )

    def forward(self, image):
        x = self.proj(image)
        patches = x.flatten(2).transpose(1, 2) + self.pos
        token = patches.mean(dim=1)
        return patches, token


class PatchesOnlyBackbone(TinyBackbone):
    def forward(self, image):
        patches, _ = super().forward(image)
        return patches


class TinySegmenter(torch.nn.Module):
    """Alpha = channel mean (times an optional gain, to exercise clamping)."""

    def __init__(self, gain: float = 1.0):
        super().__init__()
        self.gain = gain

    def forward(self, image):
        return image.mean(dim=1, keepdim=True) * self.gain


class NanSegmenter(torch.nn.Module):
    def forward(self, image):
        return image.mean(dim=1, keepdim=True) * float("nan")


def _export(module: torch.nn.Module, path: Path, input_size: int = 336) -> Path:
    module.eval()
    example = (torch.zeros(1, 3, input_size, input_size),)
    exported = torch.export.export(module, example)
    torch.export.save(exported, str(path))
    return path


@pytest.fixture(scope="session")
def engines(tmp_path_factory) -> dict[str, Path]:
    root = tmp_path_factory.mktemp("engines")
    return {
        "backbone": _export(TinyBackbone(dim=8, seed=0), root / "backbone.pt2"),
        "backbone_b": _export(TinyBackbone(dim=8, seed=7), root / "backbone_b.pt2"),
        "backbone_224": _export(
            TinyBackbone(dim=8, seed=0, input_size=224), root / "backbone_224.pt2", 224
        ),
        "backbone_bad_grid": _export(
            TinyBackbone(dim=8, seed=0, stride=16), root / "backbone_bad_grid.pt2"
        ),
        "backbone_no_token": _export(
            PatchesOnlyBackbone(dim=8, seed=0), root / "backbone_no_token.pt2"
        ),
        "segmentation": _export(TinySegmenter(), root / "segmentation.pt2"),
        "segmentation_hot": _export(TinySegmenter(gain=1.5), root / "segmentation_hot.pt2"),
        "segmentation_nan": _export(NanSegmenter(), root / "segmentation_nan.pt2"),
    }


def synthetic_catalog(
    categories=("boxes", "mugs"),
    instances=(1, 2),
    studio: bool = True,
    wild: bool = True,
    root: Path = Path("/synthetic"),
) -> Catalog:
    """In-memory catalog with fabricated paths; complete unless told otherwise."""
    records = []
    for cat in categories:
        for inst in instances:
            conditions = []
            if studio:
                conditions += [
                    Studio(light, pose) for light in LIGHTINGS for pose in range(N_POSES)
                ]
            if wild:
                conditions += [Wild(scene) for scene in range(N_SCENES)]
            for cond in conditions:
                path = root / cat / f"instance_{inst}" / f"{cond.descriptor()}.jpg"
                records.append(ImageRef(cat, inst, cond, path))
    return Catalog(tuple(records))


def write_wild_dataset(
    root: Path, categories=("boxes", "mugs"), size: int = 96, seed: int = 123
) -> Path:
    """Write a wild-only dataset tree of small random JPEGs (2 instances each)."""
    rng = np.random.default_rng(seed)
    for cat in categories:
        for inst in (1, 2):
            d = root / cat / f"instance_{inst}"
            d.mkdir(parents=True, exist_ok=True)
            for scene in range(N_SCENES):
                arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
                Image.fromarray(arr).save(d / f"wild_{scene}.jpg", quality=92)
    return root


@pytest.fixture()
def wild_dataset(tmp_path) -> Path:
    return write_wild_dataset(tmp_path / "data")
