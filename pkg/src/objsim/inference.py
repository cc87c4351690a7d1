"""Run exported backbone/segmentation graphs over preprocessed images.

Engines are exported-program graph files (``.pt2``; TorchScript accepted as a
legacy fallback), produced by the export toolkit: the backbone maps
``image f32[1,3,336,336]`` (raw [0,1] floats, normalization baked into the
graph) to ``patches f32[1,576,D]`` plus an optional ``token f32[1,D]``; the
segmentation graph maps the same input to ``alpha f32[1,1,336,336]``. Engine
identity is the content hash of the graph file, so caches never alias across
engines.
"""

from __future__ import annotations

import hashlib
import logging
import queue
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

from .catalog import INPUT_SIZE

logger = logging.getLogger(__name__)

PATCH_SIZE = 14
GRID_SIDE = INPUT_SIZE // PATCH_SIZE
N_PATCHES = GRID_SIDE * GRID_SIDE


class EngineContractError(RuntimeError):
    """An engine's input/output signature does not match the contract."""


@dataclass(frozen=True)
class BackboneSpec:
    """Geometry of the patch-feature backbone."""

    feature_dim: int = 768
    input_size: int = INPUT_SIZE
    patch_size: int = PATCH_SIZE

    def __post_init__(self) -> None:
        if self.input_size % self.patch_size != 0:
            raise ValueError(
                f"input size {self.input_size} not divisible by patch size {self.patch_size}"
            )
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")

    @property
    def grid_side(self) -> int:
        return self.input_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_side**2


@dataclass(frozen=True)
class PatchFeatureGrid:
    """Per-image grid of patch feature vectors plus optional global token."""

    grid: np.ndarray  # (grid_side, grid_side, D) float32
    global_token: np.ndarray | None = None  # (D,) float32

    def __post_init__(self) -> None:
        g = self.grid
        if g.ndim != 3 or g.shape[0] != g.shape[1] or g.shape[0] != GRID_SIDE:
            raise ValueError(f"expected grid ({GRID_SIDE}, {GRID_SIDE}, D), got {g.shape}")
        if g.dtype != np.float32:
            raise ValueError(f"grid must be float32, got {g.dtype}")
        if not np.isfinite(g).all():
            raise ValueError("grid contains non-finite values")
        t = self.global_token
        if t is not None:
            if t.ndim != 1 or t.shape[0] != g.shape[2]:
                raise ValueError(
                    f"token shape {t.shape} does not match feature dim {g.shape[2]}"
                )
            if not np.isfinite(t).all():
                raise ValueError("global token contains non-finite values")

    @property
    def feature_dim(self) -> int:
        return self.grid.shape[2]


@dataclass(frozen=True)
class ForegroundMask:
    """Pixel-level alpha matte at model input resolution, values in [0, 1]."""

    alpha: np.ndarray  # (336, 336) float32

    def __post_init__(self) -> None:
        a = self.alpha
        if a.shape != (INPUT_SIZE, INPUT_SIZE):
            raise ValueError(f"expected alpha ({INPUT_SIZE}, {INPUT_SIZE}), got {a.shape}")
        if a.dtype != np.float32:
            raise ValueError(f"alpha must be float32, got {a.dtype}")
        if not np.isfinite(a).all():
            raise ValueError("alpha contains non-finite values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("alpha values outside [0, 1]")


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _image_to_batch(image: np.ndarray) -> torch.Tensor:
    if (
        image.ndim != 3
        or image.shape != (INPUT_SIZE, INPUT_SIZE, 3)
        or image.dtype != np.uint8
    ):
        raise ValueError(
            f"expected uint8 ({INPUT_SIZE}, {INPUT_SIZE}, 3) image, got {image.dtype} {image.shape}"
        )
    t = torch.from_numpy(np.ascontiguousarray(image)).to(torch.float32).div_(255.0)
    return t.permute(2, 0, 1).unsqueeze(0)


class _GraphEngine:
    """Shared loader: an exported graph module plus its content-hash identity."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        if not self.path.is_file():
            raise EngineContractError(f"engine file not found: {self.path}")
        self.engine_id = _file_hash(self.path)
        try:
            if self.path.suffix == ".pt2":
                self.module = torch.export.load(str(self.path)).module()
            else:
                self.module = torch.jit.load(str(self.path), map_location="cpu").eval()
        except Exception as exc:
            raise EngineContractError(f"cannot load graph {self.path}: {exc}") from exc

    def _run(self, image: np.ndarray):
        batch = _image_to_batch(image)
        try:
            with torch.inference_mode():
                out = self.module(batch)
        except (RuntimeError, AssertionError) as exc:
            raise EngineContractError(
                f"engine {self.path} rejected input f32[1,3,{INPUT_SIZE},{INPUT_SIZE}]: {exc}"
            ) from exc
        return out


class BackboneEngine(_GraphEngine):
    """Session over an exported patch-feature backbone graph."""

    def run(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Return ``(patches (576, D) f32, token (D,) f32 or None)``."""
        out = self._run(image)
        if isinstance(out, torch.Tensor):
            patches_t, token_t = out, None
        elif isinstance(out, (tuple, list)) and len(out) in (1, 2):
            patches_t = out[0]
            token_t = out[1] if len(out) == 2 else None
        else:
            raise EngineContractError(
                f"backbone {self.path}: expected outputs (patches[, token]), got {type(out)}"
            )
        if patches_t.ndim != 3 or patches_t.shape[0] != 1 or patches_t.shape[1] != N_PATCHES:
            raise EngineContractError(
                f"backbone {self.path}: expected patches (1, {N_PATCHES}, D), "
                f"found {tuple(patches_t.shape)}"
            )
        d = patches_t.shape[2]
        patches = patches_t[0].detach().cpu().numpy().astype(np.float32, copy=False)
        token = None
        if token_t is not None:
            if token_t.shape != (1, d):
                raise EngineContractError(
                    f"backbone {self.path}: expected token (1, {d}), found {tuple(token_t.shape)}"
                )
            token = token_t[0].detach().cpu().numpy().astype(np.float32, copy=False)
        return patches, token


class SegmentationEngine(_GraphEngine):
    """Session over an exported foreground-segmentation graph."""

    def run(self, image: np.ndarray) -> np.ndarray:
        """Return the alpha matte (336, 336) f32, clamped into [0, 1]."""
        out = self._run(image)
        if isinstance(out, (tuple, list)):
            if len(out) != 1:
                raise EngineContractError(
                    f"segmentation {self.path}: expected a single alpha output, got {len(out)}"
                )
            out = out[0]
        expected = (1, 1, INPUT_SIZE, INPUT_SIZE)
        if tuple(out.shape) != expected:
            raise EngineContractError(
                f"segmentation {self.path}: expected alpha {expected}, found {tuple(out.shape)}"
            )
        alpha = out[0, 0].detach().cpu().numpy().astype(np.float32, copy=False)
        return np.clip(alpha, 0.0, 1.0)


def embed(image: np.ndarray, engine: BackboneEngine) -> PatchFeatureGrid:
    """Embed a preprocessed image into its patch feature grid (plus token).

    Deterministic for a fixed engine and input; non-finite outputs are
    rejected at this boundary.
    """
    patches, token = engine.run(image)
    grid = patches.reshape(GRID_SIDE, GRID_SIDE, -1)
    if not np.isfinite(grid).all() or (token is not None and not np.isfinite(token).all()):
        raise EngineContractError(f"backbone {engine.path} produced non-finite features")
    return PatchFeatureGrid(grid.copy(), None if token is None else token.copy())


def segment(image: np.ndarray, engine: SegmentationEngine) -> ForegroundMask:
    """Segment a preprocessed image into its foreground alpha matte."""
    alpha = engine.run(image)
    if not np.isfinite(alpha).all():
        raise EngineContractError(f"segmentation {engine.path} produced non-finite alpha")
    return ForegroundMask(alpha.copy())


def area_downsample_alpha(alpha: np.ndarray) -> ForegroundMask:
    """Bring a higher-resolution alpha matte down to model resolution.

    Area averaging preserves per-region coverage fractions, so masks computed
    at higher resolution stay comparable with native 336x336 ones.
    """
    arr = np.asarray(alpha, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D alpha matte, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("alpha values outside [0, 1]")
    if arr.shape != (INPUT_SIZE, INPUT_SIZE):
        arr = cv2.resize(arr, (INPUT_SIZE, INPUT_SIZE), interpolation=cv2.INTER_AREA)
        arr = np.clip(arr, 0.0, 1.0)
    return ForegroundMask(arr)


class SessionPool:
    """Hands exclusive engine sessions to workers.

    Sessions are not assumed reentrant: each worker borrows one via
    :meth:`acquire` and returns it on exit.
    """

    def __init__(self, path: str | Path, engine_cls, size: int = 1) -> None:
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self._queue: queue.Queue = queue.Queue()
        self.sessions = [engine_cls(path) for _ in range(size)]
        for s in self.sessions:
            self._queue.put(s)
        self.engine_id = self.sessions[0].engine_id

    @contextmanager
    def acquire(self):
        session = self._queue.get()
        try:
            yield session
        finally:
            self._queue.put(session)
