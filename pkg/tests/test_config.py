"""Config loading, overrides, validation, and hashing."""

from pathlib import Path

import pytest

from objsim.config import (
    ConfigError,
    config_hash,
    load_config,
    require_dataset,
    require_engines,
    require_fusion_inputs,
)


def test_defaults():
    config = load_config(None)
    assert config.variant == "crop_feat"
    assert config.protocols == ("illumination", "pose", "wild", "all")
    assert config.jobs == 1
    assert config.crop.pad_frac == 0.05
    assert config.fusion.grid == tuple(round(0.1 * i, 1) for i in range(1, 10))


def test_yaml_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(
        "variant: global\n"
        "seed: 7\n"
        "protocols: [wild]\n"
        "crop:\n"
        "  pad_frac: 0.1\n"
        "fusion:\n"
        "  alpha: 0.6\n"
        "  camera_exclusion: false\n"
    )
    config = load_config(cfg, {"seed": 9, "jobs": 4})
    assert config.variant == "global"
    assert config.seed == 9  # override wins
    assert config.jobs == 4
    assert config.protocols == ("wild",)
    assert config.crop.pad_frac == 0.1
    assert config.fusion.alpha == 0.6
    assert config.fusion.camera_exclusion is False


def test_none_overrides_are_ignored(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("seed: 5\n")
    config = load_config(cfg, {"seed": None, "variant": None})
    assert config.seed == 5
    assert config.variant == "crop_feat"


def test_single_protocol_string():
    config = load_config(None, {"protocols": "wild"})
    assert config.protocols == ("wild",)


def test_unknown_keys_rejected(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("varaint: crop_feat\n")
    with pytest.raises(ConfigError, match="unknown config keys"):
        load_config(cfg)


def test_bad_variant_and_protocol():
    with pytest.raises(ConfigError, match="variant"):
        load_config(None, {"variant": "magic"})
    with pytest.raises(ConfigError, match="protocols"):
        load_config(None, {"protocols": ["wilds"]})


def test_require_dataset(tmp_path):
    config = load_config(None, {"dataset_root": str(tmp_path)})
    require_dataset(config)
    with pytest.raises(ConfigError, match="required"):
        require_dataset(load_config(None))
    with pytest.raises(ConfigError, match="not found"):
        require_dataset(load_config(None, {"dataset_root": str(tmp_path / "nope")}))


def test_require_engines(tmp_path):
    backbone = tmp_path / "b.pt2"
    backbone.touch()
    config = load_config(
        None, {"backbone": str(backbone), "variant": "global"}
    )
    require_engines(config, segmentation=True)
    config = load_config(None, {"variant": "crop_feat", "backbone": str(backbone)})
    with pytest.raises(ConfigError, match="segmentation"):
        require_engines(config, segmentation=True)
    require_engines(load_config(None, {"variant": "ssim"}), segmentation=True)


def test_require_fusion_inputs(tmp_path):
    with pytest.raises(ConfigError, match="missing fusion inputs"):
        require_fusion_inputs(load_config(None))


def test_config_hash_tracks_content():
    a = load_config(None, {"seed": 1})
    b = load_config(None, {"seed": 1})
    c = load_config(None, {"seed": 2})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


def test_paths_become_path_objects():
    config = load_config(None, {"dataset_root": "data", "out_dir": "out"})
    assert isinstance(config.dataset_root, Path)
    assert isinstance(config.out_dir, Path)
