"""Seeded K-means over L2-normalized embeddings and the adjusted Rand index."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import Embedding

logger = logging.getLogger(__name__)

MAX_ITER = 300
RESTARTS = 10
SHIFT_TOL = 1e-6


@dataclass
class KMeansResult:
    labels: np.ndarray  # (n,) int32
    inertia: float
    n_iter: int
    degenerate: bool = False


def _as_points(embeddings) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        pts = embeddings.astype(np.float64, copy=True)
    else:
        pts = np.stack(
            [e.v if isinstance(e, Embedding) else np.asarray(e) for e in embeddings]
        ).astype(np.float64)
    if pts.ndim != 2:
        raise ValueError(f"expected (n, D) points, got shape {pts.shape}")
    return pts


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[c] = points[int(rng.integers(n))]
            continue
        probs = d2 / total
        centers[c] = points[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(
    points: np.ndarray,
    centers: np.ndarray,
    max_iter: int = MAX_ITER,
    tol: float = SHIFT_TOL,
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """One Lloyd run. Returns (labels, centers, inertia, inertia trace)."""
    k = centers.shape[0]
    centers = centers.copy()
    trace: list[float] = []
    labels = np.zeros(points.shape[0], dtype=np.int32)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1).astype(np.int32)  # ties: lowest center index
        trace.append(float(d2[np.arange(points.shape[0]), labels].sum()))
        new_centers = centers.copy()
        for c in range(k):
            mask = labels == c
            if mask.any():
                new_centers[c] = points[mask].mean(axis=0)
            else:
                # Re-seed an empty cluster at the point farthest from its center.
                worst = int(d2[np.arange(points.shape[0]), labels].argmax())
                new_centers[c] = points[worst]
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1).astype(np.int32)
    inertia = float(d2[np.arange(points.shape[0]), labels].sum())
    return labels, centers, inertia, trace


def kmeans(
    embeddings: Sequence[Embedding] | np.ndarray,
    k: int = 2,
    seed: int = 0,
    restarts: int = RESTARTS,
    max_iter: int = MAX_ITER,
    tol: float = SHIFT_TOL,
) -> KMeansResult:
    """Cluster embeddings with Euclidean K-means after L2 normalization.

    Runs ``restarts`` seeded plusplus-style initializations and keeps the
    lowest-inertia solution; a run converges when the largest centroid shift
    drops below ``tol``. Fewer distinct points than ``k`` yields a degenerate
    labeling (one label per distinct point) with a warning.
    """
    points = _as_points(embeddings)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    points = points / norms

    distinct = np.unique(points, axis=0)
    if distinct.shape[0] < k:
        logger.warning(
            "fewer than %d distinct points: degenerate clustering returned", k
        )
        labels = np.zeros(n, dtype=np.int32)
        lookup = {tuple(row): i for i, row in enumerate(distinct)}
        for i, row in enumerate(points):
            labels[i] = lookup[tuple(row)]
        return KMeansResult(labels, 0.0, 0, degenerate=True)

    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, float, int] | None = None
    for _ in range(restarts):
        init = _plusplus_init(points, k, rng)
        labels, _, inertia, trace = _lloyd(points, init, max_iter, tol)
        if best is None or inertia < best[1]:
            best = (labels, inertia, len(trace))
    labels, inertia, n_iter = best
    return KMeansResult(labels, inertia, n_iter)


def adjusted_rand_index(pred: Sequence[int], truth: Sequence[int]) -> float:
    """Chance-corrected partition agreement: (Index - Expected) / (Max - Expected).

    Computed from the contingency table under the permutation model. When the
    correction is degenerate (both partitions a single cluster, or both all
    singletons) the partitions are identical and 1.0 is returned.

    Raises:
        ValueError: On a length mismatch or fewer than 2 samples.
    """
    a = np.asarray(pred)
    b = np.asarray(truth)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label length mismatch: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise ValueError("adjusted Rand index needs at least 2 samples")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) // 2

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))
