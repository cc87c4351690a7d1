"""Foreground feature averaging and similarity scoring over patch features.

Two pooling routes produce an embedding per image: discard background patch
features after encoding the full image (crop-feat), or crop/whiten the image
before encoding and average every patch (crop-img). The backbone's global
token is a third embedding source. Embeddings are compared by cosine
similarity.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from . import matrixio
from .catalog import INPUT_SIZE
from .inference import (
    GRID_SIDE,
    PATCH_SIZE,
    BackboneEngine,
    ForegroundMask,
    PatchFeatureGrid,
    embed,
)

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 0.5
BOX_PAD_FRAC = 0.05
WHITE = 255


class EmbeddingSource(enum.Enum):
    CROP_FEAT = "crop_feat"
    CROP_IMG = "crop_img"
    GLOBAL_TOKEN = "global"


class SimilarityKind(enum.Enum):
    COSINE = "cosine"
    SSIM = "ssim"


@dataclass(frozen=True)
class PatchMask:
    """Patch-resolution foreground mask over the feature grid."""

    bits: np.ndarray  # (GRID_SIDE, GRID_SIDE) bool
    degenerate: bool = False  # True when the fallback marked everything foreground

    def __post_init__(self) -> None:
        if self.bits.shape != (GRID_SIDE, GRID_SIDE) or self.bits.dtype != np.bool_:
            raise ValueError(
                f"expected bool ({GRID_SIDE}, {GRID_SIDE}) bits, got {self.bits.dtype} {self.bits.shape}"
            )
        if self.fg_count < 1:
            raise ValueError("patch mask must keep at least one foreground patch")

    @property
    def fg_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class Embedding:
    """Pooled feature vector; the unit of all similarity comparisons."""

    v: np.ndarray  # (D,) float32
    source: EmbeddingSource

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", np.asarray(self.v))
        if self.v.ndim != 1:
            raise ValueError(f"embedding must be a vector, got shape {self.v.shape}")
        if self.v.dtype != np.float32:
            object.__setattr__(self, "v", self.v.astype(np.float32))
        if not np.isfinite(self.v).all():
            raise ValueError("embedding contains non-finite values")
        if not self.v.any():
            raise ValueError("embedding vector is zero (degenerate features)")

    @property
    def dim(self) -> int:
        return self.v.shape[0]


def downsample_mask(mask: ForegroundMask, threshold: float = MASK_THRESHOLD) -> PatchMask:
    """Downsample a pixel alpha matte to the patch grid.

    Each 14x14 block becomes foreground iff its mean alpha exceeds
    ``threshold``. If no block passes, every block is marked foreground and the
    mask is flagged degenerate (with a warning) so large runs keep going.
    """
    blocks = mask.alpha.astype(np.float64).reshape(
        GRID_SIDE, PATCH_SIZE, GRID_SIDE, PATCH_SIZE
    )
    means = blocks.mean(axis=(1, 3))
    bits = means > threshold
    if not bits.any():
        logger.warning("degenerate foreground mask: falling back to all patches")
        return PatchMask(np.ones_like(bits), degenerate=True)
    return PatchMask(bits)


def ffa_crop_feat(
    grid: PatchFeatureGrid,
    pmask: PatchMask,
    normalize_patches: bool = False,
) -> Embedding:
    """Average the patch features under the foreground patch mask."""
    if pmask.bits.shape != grid.grid.shape[:2]:
        raise ValueError(
            f"patch mask {pmask.bits.shape} does not match grid {grid.grid.shape[:2]}"
        )
    selected = grid.grid[pmask.bits].astype(np.float64)
    if normalize_patches:
        selected = selected / np.linalg.norm(selected, axis=1, keepdims=True)
    v = selected.mean(axis=0)
    return Embedding(v.astype(np.float32), EmbeddingSource.CROP_FEAT)


def foreground_box(
    fg: np.ndarray, pad_frac: float = BOX_PAD_FRAC
) -> tuple[int, int, int, int]:
    """Tight bounding box of a boolean mask, expanded per side and clipped.

    Returns (r0, c0, r1, c1) with exclusive ends. Expansion adds
    ``pad_frac`` of the box height/width on each side, rounded to the nearest
    pixel.
    """
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    if rows.size == 0:
        raise ValueError("foreground_box called on an empty mask")
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    pad_r = pad_frac * (r1 - r0)
    pad_c = pad_frac * (c1 - c0)
    h, w = fg.shape
    r0 = max(0, int(np.floor(r0 - pad_r + 0.5)))
    r1 = min(h, int(np.floor(r1 + pad_r + 0.5)))
    c0 = max(0, int(np.floor(c0 - pad_c + 0.5)))
    c1 = min(w, int(np.floor(c1 + pad_c + 0.5)))
    return r0, c0, r1, c1


def ffa_crop_img(
    image: np.ndarray,
    mask: ForegroundMask,
    engine: BackboneEngine,
    *,
    threshold: float = MASK_THRESHOLD,
    pad_frac: float = BOX_PAD_FRAC,
    fill: int = WHITE,
    crop_box: bool = True,
    normalize_patches: bool = False,
) -> Embedding:
    """Whiten the background, crop to the foreground box, re-embed, pool all patches.

    With ``crop_box=False`` the image is only whitened, not cropped. An empty
    mask falls back to pooling the unmodified full image, with a warning.
    """
    if image.shape[:2] != mask.alpha.shape:
        raise ValueError(
            f"mask {mask.alpha.shape} does not match image {image.shape[:2]}"
        )
    fg = mask.alpha > threshold
    if not fg.any():
        logger.warning("empty foreground mask: pooling over the full image")
        work = image
    else:
        work = image.copy()
        work[~fg] = fill
        if crop_box:
            r0, c0, r1, c1 = foreground_box(fg, pad_frac)
            work = work[r0:r1, c0:c1]
        if work.shape[:2] != (INPUT_SIZE, INPUT_SIZE):
            work = cv2.resize(
                work, (INPUT_SIZE, INPUT_SIZE), interpolation=cv2.INTER_LINEAR
            )
    grid = embed(work, engine)
    all_patches = PatchMask(np.ones((GRID_SIDE, GRID_SIDE), dtype=np.bool_))
    pooled = ffa_crop_feat(grid, all_patches, normalize_patches=normalize_patches)
    return Embedding(pooled.v, EmbeddingSource.CROP_IMG)


def global_embed(grid: PatchFeatureGrid) -> Embedding:
    """Use the backbone's global token as the embedding."""
    if grid.global_token is None:
        raise ValueError("backbone exported without global token")
    return Embedding(grid.global_token.copy(), EmbeddingSource.GLOBAL_TOKEN)


def _as_vector(x) -> np.ndarray:
    v = x.v if isinstance(x, Embedding) else np.asarray(x)
    return v.astype(np.float64, copy=False).ravel()


def cosine(a, b) -> float:
    """Cosine similarity of two embeddings (or raw vectors), clamped to [-1, 1].

    Identical inputs return exactly 1.0.
    """
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    if np.array_equal(va, vb):
        return 1.0
    s = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, s))


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric n-by-n similarity matrix with its scoring kind."""

    values: np.ndarray  # (n, n) float32
    kind: SimilarityKind

    def __post_init__(self) -> None:
        m = self.values
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {m.shape}")
        if m.dtype != np.float32:
            raise ValueError(f"similarity matrix must be float32, got {m.dtype}")
        if np.abs(m - m.T).max() > 1e-6:
            raise ValueError("similarity matrix not symmetric within 1e-6")
        if m.min() < -1.0 or m.max() > 1.0:
            raise ValueError("similarity values outside [-1, 1]")
        if self.kind is SimilarityKind.COSINE and not (np.diag(m) == 1.0).all():
            raise ValueError("cosine similarity matrix must have unit diagonal")


def pairwise_similarity(items: Sequence, kind: SimilarityKind) -> SimilarityMatrix:
    """Similarity matrix over a set of embeddings (cosine) or images (ssim).

    Each unordered pair is scored once and mirrored, so the result is
    symmetric bit-for-bit; the diagonal is exactly 1.
    """
    n = len(items)
    if n < 2:
        raise ValueError(f"need at least 2 items, got {n}")
    out = np.eye(n, dtype=np.float64)
    if kind is SimilarityKind.COSINE:
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = cosine(items[i], items[j])
    elif kind is SimilarityKind.SSIM:
        from .ssim import ssim

        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = ssim(items[i], items[j])
    else:
        raise ValueError(f"unknown similarity kind {kind!r}")
    return SimilarityMatrix(np.clip(out, -1.0, 1.0).astype(np.float32), kind)


def save_embedding(path: str | Path, embedding: Embedding) -> None:
    """Serialize an embedding as a 1xD ISMX matrix with its source in the sidecar."""
    matrixio.write_matrix(path, embedding.v.reshape(1, -1))
    matrixio.write_sidecar(path, {"source": embedding.source.value})


def load_embedding(path: str | Path) -> Embedding:
    """Load an embedding saved by :func:`save_embedding`."""
    v = matrixio.read_matrix(path)
    if v.shape[0] != 1:
        raise matrixio.MatrixFormatError(f"{path}: expected a 1xD embedding matrix")
    meta = matrixio.read_sidecar(path)
    return Embedding(v[0], EmbeddingSource(meta["source"]))
