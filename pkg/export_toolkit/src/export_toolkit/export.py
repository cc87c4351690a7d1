"""Graph export: fold normalization in, fix the signature, verify, emit manifest."""

from __future__ import annotations

import datetime
import hashlib
import json
from pathlib import Path

import torch
import torch.nn as nn

from .models import resolve_model
from .spec import INPUT_SIZE, N_PATCHES, ExportSpec, ExportSpecError

MANIFEST_SUFFIX = ".json"


class ExportError(RuntimeError):
    """The graph could not be exported or violates the output contract."""


class NormalizedWrapper(nn.Module):
    """Bakes (x - mean) / std into the graph; the runtime feeds raw [0,1]."""

    def __init__(self, inner: nn.Module, mean, std):
        super().__init__()
        self.inner = inner
        self.register_buffer("mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std).view(1, 3, 1, 1))

    def forward(self, image):
        return self.inner((image - self.mean) / self.std)


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def build_wrapped_model(spec: ExportSpec) -> nn.Module:
    """The exact module the graph is exported from (shared with parity checks)."""
    return NormalizedWrapper(resolve_model(spec), spec.mean, spec.std).eval()


def _export_graph(model: nn.Module, out_path: Path) -> None:
    example = (torch.rand(1, 3, INPUT_SIZE, INPUT_SIZE),)
    try:
        with torch.no_grad():
            exported = torch.export.export(model, example)
    except Exception as exc:
        raise ExportError(f"graph export failed on an unsupported construct: {exc}") from exc
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.export.save(exported, str(out_path))


def _write_manifest(out_path: Path, spec: ExportSpec, outputs: dict) -> dict:
    manifest = {
        "engine_id": _file_hash(out_path),
        "kind": spec.kind,
        "source": spec.source,
        "input_size": spec.input_size,
        "mean": list(spec.mean),
        "std": list(spec.std),
        "outputs": outputs,
        "export_date": datetime.date.today().isoformat(),
    }
    manifest_path = out_path.with_name(out_path.name + MANIFEST_SUFFIX)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def export_backbone(spec: ExportSpec, out_path: str | Path) -> dict:
    """Export a patch-feature backbone to ``out_path``; returns the manifest.

    The exported signature is validated by running the graph once:
    ``patches (1, 576, D)`` plus ``token (1, D)``; a declared ``feature_dim``
    that disagrees with the model is an error.
    """
    if spec.kind != "backbone":
        raise ExportSpecError(f"export_backbone got a {spec.kind!r} spec")
    model = build_wrapped_model(spec)
    out_path = Path(out_path)
    _export_graph(model, out_path)

    loaded = torch.export.load(str(out_path)).module()
    with torch.no_grad():
        out = loaded(torch.rand(1, 3, INPUT_SIZE, INPUT_SIZE))
    if not (isinstance(out, (tuple, list)) and len(out) == 2):
        raise ExportError(f"backbone graph must emit (patches, token), got {type(out)}")
    patches, token = out
    if patches.ndim != 3 or patches.shape[:2] != (1, N_PATCHES):
        raise ExportError(
            f"patches output must be (1, {N_PATCHES}, D), found {tuple(patches.shape)}"
        )
    dim = patches.shape[2]
    if tuple(token.shape) != (1, dim):
        raise ExportError(f"token output must be (1, {dim}), found {tuple(token.shape)}")
    if spec.feature_dim is not None and dim != spec.feature_dim:
        raise ExportError(f"model emits D={dim}, spec declared feature_dim={spec.feature_dim}")
    outputs = {"patches": [1, N_PATCHES, int(dim)], "token": [1, int(dim)]}
    manifest = _write_manifest(out_path, spec, outputs)
    manifest["feature_dim"] = int(dim)
    return manifest


def export_segmentation(spec: ExportSpec, out_path: str | Path) -> dict:
    """Export a foreground segmentation network; output ``alpha (1,1,336,336)``."""
    if spec.kind != "segmentation":
        raise ExportSpecError(f"export_segmentation got a {spec.kind!r} spec")
    model = build_wrapped_model(spec)
    out_path = Path(out_path)
    _export_graph(model, out_path)

    loaded = torch.export.load(str(out_path)).module()
    with torch.no_grad():
        alpha = loaded(torch.rand(1, 3, INPUT_SIZE, INPUT_SIZE))
    if isinstance(alpha, (tuple, list)):
        if len(alpha) != 1:
            raise ExportError(f"segmentation graph must emit one output, got {len(alpha)}")
        alpha = alpha[0]
    expected = (1, 1, INPUT_SIZE, INPUT_SIZE)
    if tuple(alpha.shape) != expected:
        raise ExportError(f"alpha output must be {expected}, found {tuple(alpha.shape)}")
    return _write_manifest(out_path, spec, {"alpha": list(expected)})
