"""Binary matrix file format (ISMX) used for distance matrices, embeddings and caches.

Layout: magic ``ISMX`` (4 bytes) | version u16 LE = 1 | dtype u8 = 0 (f32) |
rows u64 LE | cols u64 LE | payload rows*cols f32 LE row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ISMX"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sHBQQ")


class MatrixFormatError(ValueError):
    """Raised when an ISMX file violates the on-disk contract."""


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Write a 2-D float32 matrix to ``path`` in the ISMX format.

    Args:
        path: Destination file.
        matrix: 2-D array; cast to float32. Must be finite.

    Raises:
        MatrixFormatError: If the array is not 2-D or contains non-finite values.
    """
    arr = np.asarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise MatrixFormatError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise MatrixFormatError("matrix contains non-finite entries")
    rows, cols = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, rows, cols)
    payload = np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_matrix(path: str | Path) -> np.ndarray:
    """Read an ISMX file back into a float32 array of shape (rows, cols).

    Raises:
        MatrixFormatError: On bad magic/version/dtype, truncated or oversized
            payload, or non-finite entries.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise MatrixFormatError(f"{path}: file shorter than the ISMX header")
    magic, version, dtype, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise MatrixFormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise MatrixFormatError(f"{path}: unsupported dtype code {dtype}")
    expected = rows * cols * 4
    payload = raw[_HEADER.size :]
    if len(payload) < expected:
        raise MatrixFormatError(f"{path}: payload shorter than header claims")
    if len(payload) > expected:
        raise MatrixFormatError(f"{path}: payload longer than header claims")
    arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    arr = arr.astype(np.float32, copy=True)
    if not np.isfinite(arr).all():
        raise MatrixFormatError(f"{path}: matrix contains non-finite entries")
    return arr


def load_distance_matrix(path: str | Path) -> np.ndarray:
    """Load a query-by-gallery distance matrix (rows = queries, cols = gallery)."""
    return read_matrix(path)


def sidecar_path(path: str | Path) -> Path:
    """Path of the JSON sidecar associated with an ISMX file."""
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_sidecar(path: str | Path, meta: dict) -> None:
    """Write JSON metadata next to an ISMX file."""
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)


def read_sidecar(path: str | Path) -> dict:
    """Read the JSON sidecar of an ISMX file."""
    with open(sidecar_path(path), "r", encoding="utf-8") as fh:
        return json.load(fh)
