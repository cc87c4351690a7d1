"""Late fusion of two distance matrices and CMC scoring for re-identification.

The fused distance is the elementwise alpha-weighted average
``alpha * D_model + (1 - alpha) * D_external``; alpha is picked by sweeping a
grid on a validation split and keeping the best top-1 (smallest alpha wins
ties).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class ReidRecord:
    path: str
    vehicle_id: int
    camera_id: int | None = None

    def __post_init__(self) -> None:
        if self.vehicle_id <= 0:
            raise ValueError(f"vehicle_id must be positive, got {self.vehicle_id}")


@dataclass(frozen=True)
class ReidSet:
    """Query and gallery records; camera ids enable same-camera exclusion."""

    queries: tuple[ReidRecord, ...]
    gallery: tuple[ReidRecord, ...]

    def validate_matrix(self, distances: np.ndarray) -> None:
        expected = (len(self.queries), len(self.gallery))
        if distances.shape != expected:
            raise ValueError(
                f"distance matrix shape {distances.shape} does not match "
                f"queries x gallery {expected}"
            )
        if not np.isfinite(distances).all():
            raise ValueError("distance matrix contains non-finite entries")


def load_reid_manifest(path: str | Path) -> tuple[ReidRecord, ...]:
    """Read re-id records from a CSV with columns ``path,vehicle_id,camera_id``.

    An empty or missing camera_id disables camera filtering for that record.
    """
    records: list[ReidRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "vehicle_id"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"manifest must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        for row in reader:
            cam = (row.get("camera_id") or "").strip()
            records.append(
                ReidRecord(
                    row["path"].strip(),
                    int(row["vehicle_id"]),
                    int(cam) if cam else None,
                )
            )
    if not records:
        raise ValueError(f"no rows in re-id manifest {path}")
    return tuple(records)


def cosine_to_distance(similarity):
    """Map cosine similarity in [-1, 1] to a distance in [0, 2] (d = 1 - s)."""
    s = np.asarray(similarity, dtype=np.float32)
    if s.min() < -1.0 or s.max() > 1.0:
        raise ValueError("cosine similarity outside [-1, 1]")
    d = 1.0 - s
    return float(d) if np.isscalar(similarity) or d.ndim == 0 else d


def fuse(model: np.ndarray, external: np.ndarray, alpha: float) -> np.ndarray:
    """Elementwise ``alpha * model + (1 - alpha) * external``.

    alpha = 0 and alpha = 1 return exact copies of the respective input.
    """
    if model.shape != external.shape:
        raise ValueError(f"shape mismatch: {model.shape} vs {external.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return external.astype(np.float32, copy=True)
    if alpha == 1.0:
        return model.astype(np.float32, copy=True)
    a = np.float32(alpha)
    return (a * model.astype(np.float32) + (np.float32(1.0) - a) * external.astype(np.float32))


def minmax_normalize_rows(distances: np.ndarray) -> np.ndarray:
    """Per-query min-max normalization to [0, 1]; constant rows map to 0."""
    d = distances.astype(np.float32, copy=True)
    lo = d.min(axis=1, keepdims=True)
    hi = d.max(axis=1, keepdims=True)
    span = hi - lo
    span[span == 0.0] = 1.0
    return (d - lo) / span


@dataclass
class CmcReport:
    """CMC accuracies at the requested ranks, with query bookkeeping."""

    topk: dict[int, float]
    n_evaluated: int
    n_excluded: int
    excluded_queries: list[int] = field(default_factory=list)


def evaluate_cmc(
    distances: np.ndarray,
    reid_set: ReidSet,
    ks: Sequence[int] = (1, 5),
    camera_exclusion: bool = True,
) -> CmcReport:
    """Rank the gallery per query (ascending distance, ties by index) and score CMC.

    With camera exclusion on, gallery entries sharing both the query's
    vehicle id and camera id are removed before ranking. Queries left without
    any correct-identity candidate are excluded and counted.
    """
    reid_set.validate_matrix(distances)
    q_ids = np.array([q.vehicle_id for q in reid_set.queries])
    g_ids = np.array([g.vehicle_id for g in reid_set.gallery])
    q_cams = [q.camera_id for q in reid_set.queries]
    g_cams = [g.camera_id for g in reid_set.gallery]
    hits = {k: 0 for k in ks}
    excluded: list[int] = []
    evaluated = 0
    for qi, query in enumerate(reid_set.queries):
        valid = np.ones(len(reid_set.gallery), dtype=bool)
        if camera_exclusion and q_cams[qi] is not None:
            for gj in range(len(reid_set.gallery)):
                if g_ids[gj] == query.vehicle_id and g_cams[gj] == q_cams[qi]:
                    valid[gj] = False
        idx = np.flatnonzero(valid)
        if idx.size == 0 or not (g_ids[idx] == query.vehicle_id).any():
            excluded.append(qi)
            continue
        order = idx[np.argsort(distances[qi, idx], kind="stable")]
        correct = g_ids[order] == query.vehicle_id
        evaluated += 1
        for k in ks:
            if correct[:k].any():
                hits[k] += 1
    if evaluated == 0:
        raise ValueError("no evaluable query: every query lost all correct matches")
    topk = {k: hits[k] / evaluated for k in ks}
    return CmcReport(topk, evaluated, len(excluded), excluded)


def cmc_topk(
    distances: np.ndarray,
    reid_set: ReidSet,
    k: int,
    camera_exclusion: bool = True,
) -> float:
    """Fraction of evaluable queries with a correct match in the first k ranks."""
    return evaluate_cmc(distances, reid_set, (k,), camera_exclusion).topk[k]


@dataclass
class SweepResult:
    best_alpha: float
    table: list[dict]  # one row per alpha: {alpha, top1, top5, excluded}


def alpha_sweep(
    model: np.ndarray,
    external: np.ndarray,
    val_set: ReidSet,
    grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    camera_exclusion: bool = True,
) -> SweepResult:
    """Evaluate top-1 of the fused distances for each alpha on the grid.

    Returns the grid argmax; ties go to the smallest alpha. The grid must be
    nonempty, within [0, 1], and strictly increasing.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("alpha grid must be nonempty")
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ValueError("alpha grid values must lie in [0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("alpha grid must be strictly increasing")
    table = []
    for alpha in grid:
        report = evaluate_cmc(
            fuse(model, external, alpha), val_set, (1, 5), camera_exclusion
        )
        table.append(
            {
                "alpha": alpha,
                "top1": report.topk[1],
                "top5": report.topk[5],
                "excluded": report.n_excluded,
            }
        )
    best = max(range(len(grid)), key=lambda i: (table[i]["top1"], -i))
    return SweepResult(grid[best], table)


def sample_validation_split(
    records: Sequence[ReidRecord],
    n_ids: int,
    n_queries: int,
    seed: int,
) -> tuple[ReidRecord, ...]:
    """Seeded validation sampling: pick n_ids vehicle ids, then n_queries images.

    Sampling is reproducible from the seed; callers record the seed in their
    run manifest.
    """
    rng = np.random.default_rng(seed)
    ids = sorted({r.vehicle_id for r in records})
    if len(ids) > n_ids:
        chosen = set(rng.choice(ids, size=n_ids, replace=False).tolist())
    else:
        chosen = set(ids)
    pool = [r for r in records if r.vehicle_id in chosen]
    if len(pool) > n_queries:
        pick = rng.choice(len(pool), size=n_queries, replace=False)
        pool = [pool[i] for i in sorted(pick.tolist())]
    return tuple(pool)
