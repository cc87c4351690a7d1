"""On-disk cache for patch feature grids and foreground masks.

Entries are keyed by image content hash plus engine id so a re-exported engine
never aliases stale features. Payloads use the ISMX matrix format with a JSON
sidecar ``{engine_id, shape, created}``; corrupt entries degrade to misses.
"""

from __future__ import annotations

import hashlib
import logging
import time
from pathlib import Path

import numpy as np

from . import matrixio
from .inference import GRID_SIDE, ForegroundMask, PatchFeatureGrid

logger = logging.getLogger(__name__)


def content_hash(data: bytes) -> str:
    """Stable content key for raw bytes."""
    return hashlib.sha256(data).hexdigest()[:16]


def content_hash_file(path: str | Path) -> str:
    """Content key of an image file (hash of its bytes)."""
    return content_hash(Path(path).read_bytes())


def content_hash_array(arr: np.ndarray) -> str:
    """Content key of an in-memory tensor (dtype/shape aware)."""
    h = hashlib.sha256()
    h.update(str(arr.dtype).encode())
    h.update(str(arr.shape).encode())
    h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


class FeatureCache:
    """Directory-backed cache; many readers, single writer per key."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _base(self, key: str, engine_id: str, kind: str) -> Path:
        return self.root / f"{key}__{engine_id}.{kind}.ismx"

    def put_grid(self, key: str, engine_id: str, grid: PatchFeatureGrid) -> None:
        base = self._base(key, engine_id, "grid")
        d = grid.feature_dim
        matrixio.write_matrix(base, grid.grid.reshape(GRID_SIDE * GRID_SIDE, d))
        meta = {
            "engine_id": engine_id,
            "shape": [GRID_SIDE, GRID_SIDE, d],
            "created": time.time(),
            "kind": "grid",
            "has_token": grid.global_token is not None,
        }
        if grid.global_token is not None:
            matrixio.write_matrix(
                self._base(key, engine_id, "token"), grid.global_token.reshape(1, d)
            )
        matrixio.write_sidecar(base, meta)

    def get_grid(self, key: str, engine_id: str) -> PatchFeatureGrid | None:
        base = self._base(key, engine_id, "grid")
        if not base.exists():
            return None
        try:
            meta = matrixio.read_sidecar(base)
            flat = matrixio.read_matrix(base)
            d = flat.shape[1]
            if list(meta.get("shape", [])) != [GRID_SIDE, GRID_SIDE, d]:
                raise matrixio.MatrixFormatError(f"{base}: sidecar shape mismatch")
            if meta.get("engine_id") != engine_id:
                raise matrixio.MatrixFormatError(f"{base}: sidecar engine mismatch")
            token = None
            if meta.get("has_token"):
                token = matrixio.read_matrix(self._base(key, engine_id, "token"))[0]
            return PatchFeatureGrid(flat.reshape(GRID_SIDE, GRID_SIDE, d), token)
        except (OSError, ValueError) as exc:
            logger.warning("corrupt cache entry treated as miss: %s", exc)
            return None

    def put_mask(self, key: str, engine_id: str, mask: ForegroundMask) -> None:
        base = self._base(key, engine_id, "mask")
        matrixio.write_matrix(base, mask.alpha)
        matrixio.write_sidecar(
            base,
            {
                "engine_id": engine_id,
                "shape": list(mask.alpha.shape),
                "created": time.time(),
                "kind": "mask",
            },
        )

    def get_mask(self, key: str, engine_id: str) -> ForegroundMask | None:
        base = self._base(key, engine_id, "mask")
        if not base.exists():
            return None
        try:
            meta = matrixio.read_sidecar(base)
            if meta.get("engine_id") != engine_id:
                raise matrixio.MatrixFormatError(f"{base}: sidecar engine mismatch")
            return ForegroundMask(matrixio.read_matrix(base))
        except (OSError, ValueError) as exc:
            logger.warning("corrupt cache entry treated as miss: %s", exc)
            return None
