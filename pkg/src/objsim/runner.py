"""End-to-end pipelines behind the CLI subcommands.

Feature extraction, benchmark evaluation, oddity panels and re-id fusion all
run from a RunConfig; every run writes a manifest (config hash, seed, engine
ids, version) sufficient to reproduce it on the same inputs. Worker-pool
parallelism never changes results: partial results are merged in canonical
order.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, matrixio
from .cache import FeatureCache, content_hash_file
from .catalog import Catalog, ImageRef, Wild, load_catalog, load_manifest, preprocess
from .clustering import adjusted_rand_index, kmeans
from .config import RunConfig, config_hash
from .features import (
    Embedding,
    cosine,
    downsample_mask,
    ffa_crop_feat,
    ffa_crop_img,
    global_embed,
)
from .fusion import (
    ReidSet,
    alpha_sweep,
    evaluate_cmc,
    fuse,
    load_reid_manifest,
    minmax_normalize_rows,
    sample_validation_split,
)
from .inference import BackboneEngine, SegmentationEngine, SessionPool, embed, segment
from .protocol import EvalGroup, Protocol, build_groups, oddity, retrieval_eval
from .ssim import ssim

logger = logging.getLogger(__name__)


class RunError(RuntimeError):
    """A hard error that must map to a nonzero CLI exit code."""


def load_dataset(config: RunConfig) -> Catalog:
    if config.dataset_manifest is not None:
        return load_manifest(config.dataset_manifest)
    return load_catalog(config.dataset_root)


def _parallel_map(fn, items, jobs: int) -> list:
    """Map preserving item order; thread pool when jobs > 1."""
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def write_manifest(out_dir: Path, command: str, config: RunConfig, engine_ids: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "engine_ids": engine_ids,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


@dataclass
class FeatureStore:
    """Per-image representations plus extraction bookkeeping."""

    embeddings: dict[ImageRef, Embedding] = field(default_factory=dict)
    tensors: dict[ImageRef, np.ndarray] = field(default_factory=dict)
    degenerate_masks: int = 0
    cache_hits: int = 0
    failures: list[dict] = field(default_factory=list)
    engine_ids: dict = field(default_factory=dict)


def _make_pools(config: RunConfig, need_segmentation: bool):
    try:
        backbone = SessionPool(config.backbone, BackboneEngine, config.jobs)
        seg = None
        if need_segmentation:
            seg = SessionPool(config.segmentation, SegmentationEngine, config.jobs)
    except Exception as exc:
        raise RunError(f"engine load failure: {exc}") from exc
    return backbone, seg


def compute_features(refs: list[ImageRef], config: RunConfig) -> FeatureStore:
    """Produce the per-image representation the configured variant needs.

    ssim keeps preprocessed tensors; embedding variants run (or cache-read)
    the backbone and, for the crop variants, the segmentation engine.
    Undecodable images become recorded failures, not hard errors.
    """
    store = FeatureStore()
    refs = sorted(set(refs), key=ImageRef.sort_key)

    if config.variant == "ssim":
        def load(ref: ImageRef):
            try:
                return ref, preprocess(ref.path), None
            except ValueError as exc:
                return ref, None, str(exc)

        for ref, tensor, err in _parallel_map(load, refs, config.jobs):
            if err is not None:
                store.failures.append({"path": str(ref.path), "error": err})
            else:
                store.tensors[ref] = tensor
        return store

    needs_mask = config.variant in ("crop_feat", "crop_img")
    backbone_pool, seg_pool = _make_pools(config, needs_mask)
    store.engine_ids["backbone"] = backbone_pool.engine_id
    if seg_pool is not None:
        store.engine_ids["segmentation"] = seg_pool.engine_id
    cache = FeatureCache(config.cache_dir) if config.cache_dir else None

    def compute(ref: ImageRef):
        try:
            image = preprocess(ref.path)
        except ValueError as exc:
            return ref, None, False, False, str(exc)
        key = content_hash_file(ref.path)
        hit = False

        grid = None
        if cache is not None:
            grid = cache.get_grid(key, backbone_pool.engine_id)
        if grid is None:
            with backbone_pool.acquire() as session:
                grid = embed(image, session)
            if cache is not None:
                cache.put_grid(key, backbone_pool.engine_id, grid)
        else:
            hit = True

        mask = None
        if needs_mask:
            if cache is not None:
                mask = cache.get_mask(key, seg_pool.engine_id)
            if mask is None:
                with seg_pool.acquire() as session:
                    mask = segment(image, session)
                if cache is not None:
                    cache.put_mask(key, seg_pool.engine_id, mask)

        degenerate = False
        if config.variant == "crop_feat":
            pmask = downsample_mask(mask, config.mask_threshold)
            degenerate = pmask.degenerate
            emb = ffa_crop_feat(grid, pmask, config.normalize_patches)
        elif config.variant == "crop_img":
            with backbone_pool.acquire() as session:
                emb = ffa_crop_img(
                    image,
                    mask,
                    session,
                    threshold=config.mask_threshold,
                    pad_frac=config.crop.pad_frac,
                    fill=config.crop.fill,
                    crop_box=config.crop.crop_box,
                    normalize_patches=config.normalize_patches,
                )
        else:  # global
            emb = global_embed(grid)
        return ref, emb, hit, degenerate, None

    for ref, emb, hit, degenerate, err in _parallel_map(compute, refs, config.jobs):
        if err is not None:
            store.failures.append({"path": str(ref.path), "error": err})
            continue
        store.embeddings[ref] = emb
        store.cache_hits += int(hit)
        store.degenerate_masks += int(degenerate)
    return store


def _make_scorer(store: FeatureStore, variant: str):
    if variant == "ssim":
        tensors = store.tensors
        memo: dict[tuple, float] = {}

        def score(a: ImageRef, b: ImageRef) -> float:
            key = (a, b) if a.sort_key() <= b.sort_key() else (b, a)
            if key not in memo:
                memo[key] = ssim(tensors[key[0]], tensors[key[1]])
            return memo[key]

        return score

    embeddings = store.embeddings

    def score(a: ImageRef, b: ImageRef) -> float:
        return cosine(embeddings[a], embeddings[b])

    return score


def _cluster_groups(
    groups: list[EvalGroup], store: FeatureStore, seed: int, jobs: int
) -> dict:
    """K-means (K=2) on each group's embeddings, scored by ARI against identity."""

    def run(group: EvalGroup):
        points = [store.embeddings[ref] for ref in group.refs]
        result = kmeans(points, k=2, seed=seed)
        ari = adjusted_rand_index(result.labels, list(group.labels))
        return {
            "category": group.category,
            "key": group.key,
            "ARI": ari,
            "assignments": result.labels.tolist(),
            "degenerate": result.degenerate,
        }

    rows = _parallel_map(run, groups, jobs)
    rows.sort(key=lambda r: (r["category"], r["key"]))
    per_category: dict[str, list[float]] = {}
    for row in rows:
        per_category.setdefault(row["category"], []).append(row["ARI"])
    return {
        "ARI": sum(r["ARI"] for r in rows) / len(rows) if rows else 0.0,
        "per_group": rows,
        "per_category": {
            cat: sum(vals) / len(vals) for cat, vals in sorted(per_category.items())
        },
        "k": 2,
    }


def evaluate_catalog(catalog: Catalog, store: FeatureStore, config: RunConfig) -> dict:
    """Retrieval (+ clustering for embedding variants) over the configured protocols."""
    scorer = _make_scorer(store, config.variant)
    known = set(store.embeddings if config.variant != "ssim" else store.tensors)
    protocols = {}
    for name in config.protocols:
        proto = Protocol(name)
        groups = build_groups(catalog, proto)
        groups = [g for g in groups if all(ref in known for ref in g.refs)]
        if not groups:
            logger.warning("protocol %s skipped: no complete groups", name)
            protocols[name] = {"skipped": "no complete groups"}
            continue
        entry = {
            "groups": len(groups),
            "retrieval": retrieval_eval(groups, scorer, config.jobs).to_dict(),
        }
        if config.variant != "ssim":
            entry["clustering"] = _cluster_groups(groups, store, config.seed, config.jobs)
        protocols[name] = entry
    return {
        "variant": config.variant,
        "seed": config.seed,
        "protocols": protocols,
        "failures": store.failures,
        "degenerate_masks": store.degenerate_masks,
    }


def _fmt_pct(value: float) -> str:
    return f"{100.0 * value:.4f}"


def write_benchmark_outputs(report: dict, config: RunConfig, out_dir: Path) -> None:
    """Emit report.json plus a table.csv mirroring the per-protocol score columns.

    CSV values are percentages (ARI likewise scaled by 100); the ARI cell is
    empty for pairwise-only variants such as ssim.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(out_dir / "table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "variant", "mAP", "top1", "ARI"])
        for name in config.protocols:
            entry = report["protocols"].get(name, {})
            if "retrieval" not in entry:
                continue
            retrieval = entry["retrieval"]
            ari = ""
            if "clustering" in entry:
                ari = _fmt_pct(entry["clustering"]["ARI"])
            writer.writerow(
                [
                    name,
                    report["variant"],
                    _fmt_pct(retrieval["mAP"]),
                    _fmt_pct(retrieval["top1"]),
                    ari,
                ]
            )


def run_benchmark(config: RunConfig) -> dict:
    catalog = load_dataset(config)
    refs: list[ImageRef] = []
    for name in config.protocols:
        for group in build_groups(catalog, Protocol(name)):
            refs.extend(group.refs)
    if not refs:
        raise RunError("no complete evaluation groups for the requested protocols")
    store = compute_features(refs, config)
    report = evaluate_catalog(catalog, store, config)
    if config.out_dir is not None:
        write_benchmark_outputs(report, config, config.out_dir)
        write_manifest(config.out_dir, "benchmark", config, store.engine_ids)
    return report


def run_extract(config: RunConfig) -> dict:
    """Populate the feature/mask caches for every catalog image."""
    if config.cache_dir is None:
        raise RunError("extract requires cache_dir")
    catalog = load_dataset(config)
    backbone_pool, seg_pool = _make_pools(config, need_segmentation=True)
    cache = FeatureCache(config.cache_dir)
    engine_ids = {"backbone": backbone_pool.engine_id}
    if seg_pool is not None:
        engine_ids["segmentation"] = seg_pool.engine_id

    def one(ref: ImageRef):
        try:
            image = preprocess(ref.path)
        except ValueError as exc:
            return {"path": str(ref.path), "error": str(exc)}
        key = content_hash_file(ref.path)
        hits = 0
        grid = cache.get_grid(key, backbone_pool.engine_id)
        if grid is None:
            with backbone_pool.acquire() as session:
                grid = embed(image, session)
            cache.put_grid(key, backbone_pool.engine_id, grid)
        else:
            hits += 1
        mask = cache.get_mask(key, seg_pool.engine_id)
        if mask is None:
            with seg_pool.acquire() as session:
                mask = segment(image, session)
            cache.put_mask(key, seg_pool.engine_id, mask)
        else:
            hits += 1
        degenerate = downsample_mask(mask, config.mask_threshold).degenerate
        return {"hits": hits, "degenerate": degenerate}

    outcomes = _parallel_map(one, list(catalog.records), config.jobs)
    failures = [o for o in outcomes if "error" in o]
    done = [o for o in outcomes if "error" not in o]
    summary = {
        "images": len(catalog.records),
        "cached": len(done),
        "cache_hits": sum(o["hits"] for o in done),
        "degenerate_masks": sum(o["degenerate"] for o in done),
        "failures": sorted(failures, key=lambda f: f["path"]),
        "engine_ids": engine_ids,
    }
    if config.out_dir is not None:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        with open(config.out_dir / "extract_summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        write_manifest(config.out_dir, "extract", config, engine_ids)
    return summary


def read_oddity_manifest(path: str | Path) -> tuple[list[dict], int]:
    """Read oddity panels: CSV ``path_0..path_3,odd_index[,tag]``.

    Returns (panels, malformed_count); malformed rows are skipped.
    """
    panels: list[dict] = []
    malformed = 0
    base = Path(path).parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"path_0", "path_1", "path_2", "path_3", "odd_index"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise RunError(
                f"oddity manifest must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        for row in reader:
            try:
                odd = int(row["odd_index"])
                if not 0 <= odd < 4:
                    raise ValueError(odd)
                paths = []
                for i in range(4):
                    p = Path(row[f"path_{i}"].strip())
                    paths.append(p if p.is_absolute() else base / p)
            except (KeyError, ValueError, AttributeError):
                malformed += 1
                continue
            panels.append({"paths": paths, "odd": odd, "tag": (row.get("tag") or "").strip()})
    return panels, malformed


def run_oddity(config: RunConfig, manifest_path: str | Path) -> dict:
    """Score odd-one-out panels with the configured embedding variant."""
    panels, malformed = read_oddity_manifest(manifest_path)
    if config.variant == "ssim":
        raise RunError("oddity requires an embedding variant (not ssim)")
    refs = []
    # Panels are plain image paths; wrap each as a wild-style ref so the
    # feature pipeline can be reused unchanged.
    path_to_ref: dict[Path, ImageRef] = {}
    for i, panel in enumerate(panels):
        for p in panel["paths"]:
            if p not in path_to_ref:
                path_to_ref[p] = ImageRef(
                    category=f"panel_{len(path_to_ref):05d}",
                    instance=1,
                    condition=Wild(0),
                    path=p,
                )
            refs.append(path_to_ref[p])
    store = compute_features(refs, config)
    failed_paths = {f["path"] for f in store.failures}

    decisions = []
    correct_total = 0
    per_tag: dict[str, list[int]] = {}
    evaluated = 0
    for panel in panels:
        if any(str(p) in failed_paths for p in panel["paths"]):
            malformed += 1
            continue
        embeddings = [store.embeddings[path_to_ref[p]] for p in panel["paths"]]
        choice = oddity(embeddings)
        hit = int(choice == panel["odd"])
        evaluated += 1
        correct_total += hit
        per_tag.setdefault(panel["tag"] or "untagged", []).append(hit)
        decisions.append(
            {
                "paths": [str(p) for p in panel["paths"]],
                "odd": panel["odd"],
                "choice": choice,
                "correct": bool(hit),
                "tag": panel["tag"],
            }
        )
    report = {
        "variant": config.variant,
        "panels": evaluated,
        "skipped": malformed,
        "accuracy": correct_total / evaluated if evaluated else 0.0,
        "per_tag": {
            tag: sum(vals) / len(vals) for tag, vals in sorted(per_tag.items())
        },
        "decisions": decisions,
    }
    if config.out_dir is not None:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        with open(config.out_dir / "oddity_report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        write_manifest(config.out_dir, "oddity", config, store.engine_ids)
    return report


def _load_fusion_inputs(config: RunConfig):
    f = config.fusion
    try:
        model = matrixio.load_distance_matrix(f.model_distances)
        external = matrixio.load_distance_matrix(f.external_distances)
        queries = load_reid_manifest(f.query_manifest)
        gallery = load_reid_manifest(f.gallery_manifest)
    except (OSError, ValueError) as exc:
        raise RunError(str(exc)) from exc
    reid_set = ReidSet(queries, gallery)
    try:
        reid_set.validate_matrix(model)
        reid_set.validate_matrix(external)
    except ValueError as exc:
        raise RunError(str(exc)) from exc
    if f.normalize:
        model = minmax_normalize_rows(model)
        external = minmax_normalize_rows(external)
    return model, external, reid_set


def run_fuse(config: RunConfig) -> dict:
    """Fuse two distance matrices at the configured alpha and score CMC."""
    f = config.fusion
    if f.alpha is None:
        raise RunError("fuse requires fusion.alpha (or use the sweep command)")
    model, external, reid_set = _load_fusion_inputs(config)
    try:
        fused = fuse(model, external, f.alpha)
        report = evaluate_cmc(fused, reid_set, (1, 5), f.camera_exclusion)
    except ValueError as exc:
        raise RunError(str(exc)) from exc
    result = {
        "alpha": f.alpha,
        "top1": report.topk[1],
        "top5": report.topk[5],
        "evaluated": report.n_evaluated,
        "excluded": report.n_excluded,
        "camera_exclusion": f.camera_exclusion,
    }
    if config.out_dir is not None:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        with open(config.out_dir / "fusion_report.json", "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
        write_manifest(config.out_dir, "fuse", config, {})
    return result


def run_sweep(config: RunConfig) -> dict:
    """Sweep the alpha grid on a (possibly sampled) validation split."""
    f = config.fusion
    model, external, reid_set = _load_fusion_inputs(config)
    sampled_seed = None
    if f.val_ids is not None or f.val_queries is not None:
        n_ids = f.val_ids if f.val_ids is not None else len(
            {q.vehicle_id for q in reid_set.queries}
        )
        n_queries = f.val_queries if f.val_queries is not None else len(reid_set.queries)
        sampled = sample_validation_split(reid_set.queries, n_ids, n_queries, config.seed)
        keep = [i for i, q in enumerate(reid_set.queries) if q in set(sampled)]
        model = model[keep]
        external = external[keep]
        reid_set = ReidSet(tuple(reid_set.queries[i] for i in keep), reid_set.gallery)
        sampled_seed = config.seed
    try:
        sweep = alpha_sweep(model, external, reid_set, f.grid, f.camera_exclusion)
    except ValueError as exc:
        raise RunError(str(exc)) from exc
    result = {
        "best_alpha": sweep.best_alpha,
        "table": sweep.table,
        "camera_exclusion": f.camera_exclusion,
        "validation_seed": sampled_seed,
        "queries": len(reid_set.queries),
    }
    if config.out_dir is not None:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        with open(config.out_dir / "sweep_report.json", "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
        with open(config.out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "top1", "top5"])
            for row in sweep.table:
                writer.writerow([row["alpha"], f"{row['top1']:.6f}", f"{row['top5']:.6f}"])
        write_manifest(config.out_dir, "sweep", config, {})
    return result
