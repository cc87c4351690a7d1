"""Command-line interface: extract, benchmark, oddity, fuse, sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import (
    ConfigError,
    load_config,
    require_dataset,
    require_engines,
    require_fusion_inputs,
)
from .runner import (
    RunError,
    run_benchmark,
    run_extract,
    run_fuse,
    run_oddity,
    run_sweep,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--out", help="output directory for reports")
    parser.add_argument("--jobs", type=int, help="worker count (default 1)")
    parser.add_argument("--seed", type=int, help="top-level random seed")
    parser.add_argument("--cache-dir", help="feature/mask cache directory")
    parser.add_argument("--dataset", help="dataset root directory")
    parser.add_argument("--manifest", help="dataset manifest CSV (alternative to --dataset)")
    parser.add_argument("--backbone", help="exported backbone graph file")
    parser.add_argument("--segmentation", help="exported segmentation graph file")
    parser.add_argument(
        "--variant",
        choices=("crop_feat", "crop_img", "global", "ssim"),
        help="similarity variant",
    )
    parser.add_argument(
        "--protocol",
        action="append",
        choices=("illumination", "pose", "wild", "all"),
        help="protocol to evaluate (repeatable; default: all four)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="objsim",
        description="Object-centric image similarity benchmark toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("extract", "populate feature and mask caches for a dataset"),
        ("benchmark", "run retrieval/clustering protocols and emit report tables"),
        ("oddity", "score odd-one-out panels from a panel manifest"),
        ("fuse", "fuse two distance matrices at a fixed alpha and score CMC"),
        ("sweep", "sweep fusion alphas on a validation split"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "oddity":
            p.add_argument("--panels", required=True, help="panel manifest CSV")
        if name in ("fuse", "sweep"):
            p.add_argument("--model-distances", help="ISMX distances of the tested metric")
            p.add_argument("--external-distances", help="ISMX distances of the external model")
            p.add_argument("--queries", help="query manifest CSV")
            p.add_argument("--gallery", help="gallery manifest CSV")
            p.add_argument("--no-camera-exclusion", action="store_true")
        if name == "fuse":
            p.add_argument("--alpha", type=float, help="fusion weight in [0, 1]")
    return parser


def _config_from_args(args: argparse.Namespace):
    overrides = {
        "dataset_root": getattr(args, "dataset", None),
        "dataset_manifest": getattr(args, "manifest", None),
        "backbone": getattr(args, "backbone", None),
        "segmentation": getattr(args, "segmentation", None),
        "variant": getattr(args, "variant", None),
        "protocols": getattr(args, "protocol", None),
        "cache_dir": getattr(args, "cache_dir", None),
        "seed": getattr(args, "seed", None),
        "out_dir": getattr(args, "out", None),
        "jobs": getattr(args, "jobs", None),
    }
    config = load_config(args.config, overrides)
    fusion_overrides = {}
    for attr, key in (
        ("model_distances", "model_distances"),
        ("external_distances", "external_distances"),
        ("queries", "query_manifest"),
        ("gallery", "gallery_manifest"),
        ("alpha", "alpha"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            fusion_overrides[key] = value
    if getattr(args, "no_camera_exclusion", False):
        fusion_overrides["camera_exclusion"] = False
    if fusion_overrides:
        from dataclasses import replace

        from pathlib import Path

        f = config.fusion
        for key, value in fusion_overrides.items():
            if key in ("model_distances", "external_distances", "query_manifest", "gallery_manifest"):
                value = Path(value)
            f = replace(f, **{key: value})
        config = replace(config, fusion=f)
    return config


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "extract":
            require_dataset(config)
            require_engines(config, segmentation=True)
            result = run_extract(config)
        elif args.command == "benchmark":
            require_dataset(config)
            require_engines(config, segmentation=True)
            result = run_benchmark(config)
        elif args.command == "oddity":
            require_engines(config, segmentation=True)
            result = run_oddity(config, args.panels)
        elif args.command == "fuse":
            require_fusion_inputs(config)
            result = run_fuse(config)
        else:  # sweep
            require_fusion_inputs(config)
            result = run_sweep(config)
    except (ConfigError, RunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_summary(result), indent=2, sort_keys=True))
    return 0


def _summary(result: dict) -> dict:
    """Trim bulky per-item breakdowns from the stdout echo; files keep them."""
    slim = {}
    for key, value in result.items():
        if key in ("decisions", "failures") and isinstance(value, list) and len(value) > 10:
            slim[key] = f"{len(value)} entries (see report files)"
        elif key == "protocols" and isinstance(value, dict):
            compact = {}
            for name, entry in value.items():
                row = {k: entry[k] for k in ("groups", "skipped") if k in entry}
                if "retrieval" in entry:
                    row["mAP"] = entry["retrieval"]["mAP"]
                    row["top1"] = entry["retrieval"]["top1"]
                if "clustering" in entry:
                    row["ARI"] = entry["clustering"]["ARI"]
                compact[name] = row
            slim[key] = compact
        else:
            slim[key] = value
    return slim


if __name__ == "__main__":
    sys.exit(main())
