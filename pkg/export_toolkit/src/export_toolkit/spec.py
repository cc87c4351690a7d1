"""Export specifications: what to export and the signature it must satisfy.

The runtime contract is fixed: input ``image f32[1,3,336,336]`` carrying raw
[0,1] floats; backbone outputs ``patches f32[1,576,D]`` and ``token f32[1,D]``;
segmentation outputs ``alpha f32[1,1,336,336]``. Normalization constants are
folded into the exported graph so the runtime never needs model-specific
preprocessing knowledge.
"""

from __future__ import annotations

from dataclasses import dataclass

INPUT_SIZE = 336
PATCH_SIZE = 14
GRID_SIDE = INPUT_SIZE // PATCH_SIZE
N_PATCHES = GRID_SIDE * GRID_SIDE

# Channel statistics baked into the graph (the common ImageNet constants used
# by the supported pretrained backbones).
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)


class ExportSpecError(ValueError):
    """The requested export violates the runtime contract."""


@dataclass(frozen=True)
class ExportSpec:
    """One export request.

    ``source`` is either a registered model name (see ``models.REGISTRY``) or
    a dotted factory path ``package.module:callable`` returning an eval-ready
    ``torch.nn.Module``.
    """

    source: str
    kind: str  # "backbone" | "segmentation"
    feature_dim: int | None = None  # expected D; validated after export
    input_size: int = INPUT_SIZE
    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD
    seed: int = 0  # initialization seed for stand-in sources

    def __post_init__(self) -> None:
        if self.kind not in ("backbone", "segmentation"):
            raise ExportSpecError(f"kind must be backbone|segmentation, got {self.kind!r}")
        if self.input_size != INPUT_SIZE:
            raise ExportSpecError(
                f"input size {self.input_size} refused: the runtime contract is fixed "
                f"at {INPUT_SIZE}x{INPUT_SIZE}"
            )
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ExportSpecError("mean/std must have 3 channel entries")
        if any(s <= 0 for s in self.std):
            raise ExportSpecError("std entries must be positive")
        if self.kind == "segmentation" and self.feature_dim is not None:
            raise ExportSpecError("feature_dim applies to backbone exports only")
        if self.feature_dim is not None and self.feature_dim < 1:
            raise ExportSpecError("feature_dim must be positive")
