"""Dataset catalog: scan a paired-object directory tree into typed image records.

Expected layout: ``root/<category>/instance_<k>/<file>.jpg`` with studio images
named ``<lighting>_<angle>`` (lighting in left/right/back/off, angle a multiple
of 15 in 000..345) and wild images named ``wild_<k>`` (k in 0..3). A CSV
manifest (``path,category,instance,condition``) is accepted as an alternative
source, reusing the same condition descriptors.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

INPUT_SIZE = 336

LIGHTINGS = ("left", "right", "back", "off")
N_POSES = 24
N_SCENES = 4
POSE_ANGLE_STEP = 15

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png"}


class CatalogError(ValueError):
    """Raised when a dataset root or manifest cannot be loaded."""


class ImageDecodeError(ValueError):
    """Raised when an image file cannot be decoded. Carries the path."""

    def __init__(self, path: str | Path, reason: str = "") -> None:
        self.path = Path(path)
        msg = f"cannot decode image: {self.path}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


@dataclass(frozen=True)
class Studio:
    """Controlled capture: one of 4 lightings at one of 24 turntable poses."""

    lighting: str
    pose_index: int

    def __post_init__(self) -> None:
        if self.lighting not in LIGHTINGS:
            raise ValueError(f"unknown lighting {self.lighting!r}")
        if not 0 <= self.pose_index < N_POSES:
            raise ValueError(f"pose_index {self.pose_index} outside [0, {N_POSES})")

    def descriptor(self) -> str:
        return f"{self.lighting}_{self.pose_index * POSE_ANGLE_STEP:03d}"


@dataclass(frozen=True)
class Wild:
    """In-the-wild capture in one of 4 scenes."""

    scene_index: int

    def __post_init__(self) -> None:
        if not 0 <= self.scene_index < N_SCENES:
            raise ValueError(f"scene_index {self.scene_index} outside [0, {N_SCENES})")

    def descriptor(self) -> str:
        return f"wild_{self.scene_index}"


Condition = Studio | Wild


def parse_descriptor(stem: str) -> Condition | None:
    """Parse a file-name descriptor into a condition, or None if unparseable."""
    parts = stem.lower().split("_")
    if len(parts) != 2:
        return None
    head, tail = parts
    if head == "wild":
        if tail.isdigit() and 0 <= int(tail) < N_SCENES:
            return Wild(int(tail))
        return None
    if head in LIGHTINGS and tail.isdigit():
        angle = int(tail)
        if angle % POSE_ANGLE_STEP == 0 and 0 <= angle < N_POSES * POSE_ANGLE_STEP:
            return Studio(head, angle // POSE_ANGLE_STEP)
    return None


def _condition_sort_key(cond: Condition) -> tuple:
    if isinstance(cond, Studio):
        return (0, LIGHTINGS.index(cond.lighting), cond.pose_index)
    return (1, cond.scene_index, 0)


@dataclass(frozen=True)
class ImageRef:
    """One image of one object instance under one extrinsic condition."""

    category: str
    instance: int
    condition: Condition
    path: Path

    def __post_init__(self) -> None:
        if self.instance < 1:
            raise ValueError(f"instance must be >= 1, got {self.instance}")

    def sort_key(self) -> tuple:
        return (self.category, self.instance) + _condition_sort_key(self.condition)


@dataclass(frozen=True)
class Catalog:
    """Immutable, canonically sorted collection of image records.

    ``warnings`` lists the paths that were skipped during loading. A complete
    (category, instance) holds 96 studio records (4 lightings x 24 poses) and
    4 wild records.
    """

    records: tuple[ImageRef, ...]
    warnings: tuple[str, ...] = ()
    categories: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.records, key=ImageRef.sort_key))
        seen: set = set()
        for r in ordered:
            key = (r.category, r.instance, r.condition)
            if key in seen:
                raise CatalogError(f"duplicate record for {key}")
            seen.add(key)
        object.__setattr__(self, "records", ordered)
        object.__setattr__(
            self, "categories", frozenset(r.category for r in ordered)
        )

    def instances(self, category: str) -> tuple[int, ...]:
        return tuple(
            sorted({r.instance for r in self.records if r.category == category})
        )

    def select(self, category: str, instance: int) -> tuple[ImageRef, ...]:
        return tuple(
            r
            for r in self.records
            if r.category == category and r.instance == instance
        )

    def is_complete(self, category: str, instance: int) -> bool:
        recs = self.select(category, instance)
        studio = sum(isinstance(r.condition, Studio) for r in recs)
        wild = sum(isinstance(r.condition, Wild) for r in recs)
        return studio == len(LIGHTINGS) * N_POSES and wild == N_SCENES

    def summary(self) -> dict:
        """Counts per category/instance plus completeness flags."""
        per_instance = {}
        for cat in sorted(self.categories):
            for inst in self.instances(cat):
                recs = self.select(cat, inst)
                per_instance[f"{cat}/instance_{inst}"] = {
                    "studio": sum(isinstance(r.condition, Studio) for r in recs),
                    "wild": sum(isinstance(r.condition, Wild) for r in recs),
                    "complete": self.is_complete(cat, inst),
                }
        return {
            "records": len(self.records),
            "categories": len(self.categories),
            "skipped": len(self.warnings),
            "instances": per_instance,
        }


def load_catalog(root: str | Path) -> Catalog:
    """Scan ``root/<category>/instance_<k>/*`` into a Catalog.

    Files whose names do not parse as condition descriptors are skipped with a
    warning naming the path. Two scans of the same tree yield equal catalogs.

    Raises:
        CatalogError: If the root does not exist or holds no category directory.
    """
    root = Path(root)
    if not root.is_dir():
        raise CatalogError(f"dataset root does not exist: {root}")
    records: list[ImageRef] = []
    warnings: list[str] = []
    category_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    for cat_dir in category_dirs:
        for inst_dir in sorted(p for p in cat_dir.iterdir() if p.is_dir()):
            suffix = inst_dir.name.removeprefix("instance_")
            if suffix == inst_dir.name or not suffix.isdigit():
                warnings.append(f"unrecognized instance directory: {inst_dir}")
                continue
            instance = int(suffix)
            if instance < 1:
                warnings.append(f"instance index must be >= 1: {inst_dir}")
                continue
            for img in sorted(inst_dir.iterdir()):
                if img.suffix.lower() not in IMAGE_EXTENSIONS:
                    continue
                cond = parse_descriptor(img.stem)
                if cond is None:
                    warnings.append(f"unparseable file name: {img}")
                    continue
                records.append(ImageRef(cat_dir.name, instance, cond, img))
    if not records:
        raise CatalogError(f"no categories found under {root}")
    for w in warnings:
        logger.warning(w)
    return Catalog(tuple(records), tuple(warnings))


def load_manifest(path: str | Path) -> Catalog:
    """Load a catalog from a CSV manifest: ``path,category,instance,condition``.

    Relative image paths are resolved against the manifest's directory.
    Malformed rows are skipped with a warning.
    """
    path = Path(path)
    base = path.parent
    records: list[ImageRef] = []
    warnings: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "category", "instance", "condition"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise CatalogError(
                f"manifest must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        for i, row in enumerate(reader, start=2):
            cond = parse_descriptor(row["condition"].strip())
            inst = row["instance"].strip()
            if cond is None or not inst.isdigit() or int(inst) < 1:
                warnings.append(f"{path}:{i}: malformed manifest row")
                continue
            img = Path(row["path"].strip())
            if not img.is_absolute():
                img = base / img
            records.append(ImageRef(row["category"].strip(), int(inst), cond, img))
    if not records:
        raise CatalogError(f"no usable rows in manifest {path}")
    for w in warnings:
        logger.warning(w)
    return Catalog(tuple(records), tuple(warnings))


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an RGB uint8 array of shape (H, W, 3).

    Raises:
        ImageDecodeError: If the file is missing or cannot be decoded.
    """
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(path, str(exc)) from exc


def resize_to_input(image: np.ndarray) -> np.ndarray:
    """Resample an RGB uint8 image directly to the square model input size.

    Non-square inputs are squashed (no crop, no letterboxing), bilinear with
    half-pixel centers. Same-size inputs pass through pixel-identical.
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected uint8 (H, W, 3) image, got {image.dtype} {image.shape}")
    if image.shape[:2] == (INPUT_SIZE, INPUT_SIZE):
        return image.copy()
    return cv2.resize(image, (INPUT_SIZE, INPUT_SIZE), interpolation=cv2.INTER_LINEAR)


def preprocess(path: str | Path) -> np.ndarray:
    """Decode and resize an image file to the 336x336x3 uint8 model input."""
    return resize_to_input(load_image(path))
