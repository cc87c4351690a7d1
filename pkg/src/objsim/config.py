"""Run configuration: one declarative YAML file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .fusion import DEFAULT_ALPHA_GRID

VARIANTS = ("crop_feat", "crop_img", "global", "ssim")
PROTOCOL_NAMES = ("illumination", "pose", "wild", "all")


class ConfigError(ValueError):
    """Raised when a run configuration is invalid for the requested command."""


@dataclass(frozen=True)
class CropConfig:
    """Crop-img behavior: box padding, background fill, crop-vs-whiten-only."""

    pad_frac: float = 0.05
    fill: int = 255
    crop_box: bool = True


@dataclass(frozen=True)
class FusionConfig:
    model_distances: Path | None = None
    external_distances: Path | None = None
    query_manifest: Path | None = None
    gallery_manifest: Path | None = None
    alpha: float | None = None
    grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    camera_exclusion: bool = True
    normalize: bool = False
    val_ids: int | None = None
    val_queries: int | None = None


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Path | None = None
    dataset_manifest: Path | None = None
    backbone: Path | None = None
    segmentation: Path | None = None
    variant: str = "crop_feat"
    protocols: tuple[str, ...] = PROTOCOL_NAMES
    cache_dir: Path | None = None
    seed: int = 0
    out_dir: Path | None = None
    jobs: int = 1
    mask_threshold: float = 0.5
    normalize_patches: bool = False
    crop: CropConfig = field(default_factory=CropConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, Path):
                return str(obj)
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [clean(v) for v in obj]
            return obj

        return clean(asdict(self))


def config_hash(config: RunConfig) -> str:
    """Stable hash of the resolved configuration, for run manifests."""
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _path_or_none(value) -> Path | None:
    return None if value in (None, "") else Path(value)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus override values.

    Overrides with value None are ignored, so absent CLI flags never mask the
    file's settings.
    """
    data: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    crop_data = data.get("crop") or {}
    fusion_data = data.get("fusion") or {}
    known = {
        "dataset_root",
        "dataset_manifest",
        "backbone",
        "segmentation",
        "variant",
        "protocols",
        "cache_dir",
        "seed",
        "out_dir",
        "jobs",
        "mask_threshold",
        "normalize_patches",
        "crop",
        "fusion",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    protocols = data.get("protocols", PROTOCOL_NAMES)
    if isinstance(protocols, str):
        protocols = [protocols]
    config = RunConfig(
        dataset_root=_path_or_none(data.get("dataset_root")),
        dataset_manifest=_path_or_none(data.get("dataset_manifest")),
        backbone=_path_or_none(data.get("backbone")),
        segmentation=_path_or_none(data.get("segmentation")),
        variant=str(data.get("variant", "crop_feat")),
        protocols=tuple(protocols),
        cache_dir=_path_or_none(data.get("cache_dir")),
        seed=int(data.get("seed", 0)),
        out_dir=_path_or_none(data.get("out_dir")),
        jobs=int(data.get("jobs", 1)),
        mask_threshold=float(data.get("mask_threshold", 0.5)),
        normalize_patches=bool(data.get("normalize_patches", False)),
        crop=CropConfig(
            pad_frac=float(crop_data.get("pad_frac", 0.05)),
            fill=int(crop_data.get("fill", 255)),
            crop_box=bool(crop_data.get("crop_box", True)),
        ),
        fusion=FusionConfig(
            model_distances=_path_or_none(fusion_data.get("model_distances")),
            external_distances=_path_or_none(fusion_data.get("external_distances")),
            query_manifest=_path_or_none(fusion_data.get("query_manifest")),
            gallery_manifest=_path_or_none(fusion_data.get("gallery_manifest")),
            alpha=None if fusion_data.get("alpha") is None else float(fusion_data["alpha"]),
            grid=tuple(float(a) for a in fusion_data.get("grid", DEFAULT_ALPHA_GRID)),
            camera_exclusion=bool(fusion_data.get("camera_exclusion", True)),
            normalize=bool(fusion_data.get("normalize", False)),
            val_ids=None if fusion_data.get("val_ids") is None else int(fusion_data["val_ids"]),
            val_queries=(
                None if fusion_data.get("val_queries") is None else int(fusion_data["val_queries"])
            ),
        ),
    )
    _validate_static(config)
    return config


def _validate_static(config: RunConfig) -> None:
    if config.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {config.variant!r}")
    bad = [p for p in config.protocols if p not in PROTOCOL_NAMES]
    if bad:
        raise ConfigError(f"unknown protocols {bad}; valid: {PROTOCOL_NAMES}")
    if not config.protocols:
        raise ConfigError("at least one protocol is required")
    if config.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if not 0.0 <= config.mask_threshold <= 1.0:
        raise ConfigError("mask_threshold must lie in [0, 1]")


def require_dataset(config: RunConfig) -> RunConfig:
    if config.dataset_manifest is not None:
        if not config.dataset_manifest.is_file():
            raise ConfigError(f"dataset manifest not found: {config.dataset_manifest}")
    elif config.dataset_root is not None:
        if not config.dataset_root.is_dir():
            raise ConfigError(f"dataset root not found: {config.dataset_root}")
    else:
        raise ConfigError("either dataset_root or dataset_manifest is required")
    return config


def require_engines(config: RunConfig, segmentation: bool) -> RunConfig:
    if config.variant == "ssim":
        return config
    if config.backbone is None or not config.backbone.is_file():
        raise ConfigError(f"backbone graph not found: {config.backbone}")
    if segmentation and config.variant in ("crop_feat", "crop_img"):
        if config.segmentation is None or not config.segmentation.is_file():
            raise ConfigError(f"segmentation graph not found: {config.segmentation}")
    return config


def require_fusion_inputs(config: RunConfig) -> RunConfig:
    f = config.fusion
    missing = [
        name
        for name, p in (
            ("fusion.model_distances", f.model_distances),
            ("fusion.external_distances", f.external_distances),
            ("fusion.query_manifest", f.query_manifest),
            ("fusion.gallery_manifest", f.gallery_manifest),
        )
        if p is None or not Path(p).is_file()
    ]
    if missing:
        raise ConfigError(f"missing fusion inputs: {missing}")
    return config


def with_overrides(config: RunConfig, **kwargs) -> RunConfig:
    """Functional update helper (used by tests and the CLI)."""
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    return replace(config, **kwargs)
