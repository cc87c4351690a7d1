"""Parity harness: thresholds, minimum input count, fault injection."""

import pytest
import torch

from export_toolkit.export import build_wrapped_model
from export_toolkit.parity import ParityError, verify_parity


def test_well_formed_export_passes(exported_small):
    native = build_wrapped_model(exported_small["backbone_spec"])
    report = verify_parity(exported_small["backbone_path"], native, n_inputs=8)
    assert report.passed
    assert report.max_deviation <= 1e-4
    assert report.n_inputs == 8


def test_segmentation_parity(exported_small):
    native = build_wrapped_model(exported_small["seg_spec"])
    report = verify_parity(exported_small["seg_path"], native, n_inputs=8)
    assert report.max_deviation <= 1e-4


def test_vacuous_pass_refused(exported_small):
    native = build_wrapped_model(exported_small["backbone_spec"])
    for n in (0, 4, 7):
        with pytest.raises(ValueError, match=">= 8"):
            verify_parity(exported_small["backbone_path"], native, n_inputs=n)


def test_corrupted_weight_fails_with_location(exported_small):
    native = build_wrapped_model(exported_small["backbone_spec"])
    with torch.no_grad():
        native.inner.embed.weight[0, 0, 0, 0] += 1.0
    with pytest.raises(ParityError) as err:
        verify_parity(exported_small["backbone_path"], native, n_inputs=8)
    report = err.value.report
    assert report.max_deviation > 1e-4
    assert "position" in str(err.value)
    assert len(report.worst_position) > 0


def test_parity_is_seed_reproducible(exported_small):
    native = build_wrapped_model(exported_small["backbone_spec"])
    a = verify_parity(exported_small["backbone_path"], native, n_inputs=8, seed=5)
    b = verify_parity(exported_small["backbone_path"], native, n_inputs=8, seed=5)
    assert a == b
