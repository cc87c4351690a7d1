"""Numeric parity between a native module and its exported graph."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .spec import INPUT_SIZE

PARITY_THRESHOLD = 1e-4
MIN_INPUTS = 8


@dataclass(frozen=True)
class ParityReport:
    max_deviation: float
    worst_output: int  # index within the graph's output tuple
    worst_position: tuple[int, ...]
    n_inputs: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.threshold


class ParityError(RuntimeError):
    """Exported graph deviates from native execution beyond the threshold."""

    def __init__(self, report: ParityReport):
        self.report = report
        super().__init__(
            f"parity failed: max |native - exported| = {report.max_deviation:.3e} "
            f"> {report.threshold:.0e} at output {report.worst_output}, "
            f"position {report.worst_position}"
        )


def _as_tuple(out):
    return tuple(out) if isinstance(out, (tuple, list)) else (out,)


def verify_parity(
    graph_path: str | Path,
    native: nn.Module,
    n_inputs: int = MIN_INPUTS,
    seed: int = 0,
    threshold: float = PARITY_THRESHOLD,
) -> ParityReport:
    """Compare the exported graph against native execution on random inputs.

    At least 8 inputs are required (a smaller n would be a vacuous pass).
    Returns the report when the maximum absolute deviation is within the
    threshold; raises ParityError carrying the worst-case location otherwise.
    """
    if n_inputs < MIN_INPUTS:
        raise ValueError(f"n_inputs must be >= {MIN_INPUTS}, got {n_inputs}")
    exported = torch.export.load(str(Path(graph_path))).module()
    native = native.eval()
    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    worst_output = 0
    worst_position: tuple[int, ...] = ()
    with torch.no_grad():
        for _ in range(n_inputs):
            image = torch.rand(1, 3, INPUT_SIZE, INPUT_SIZE, generator=generator)
            native_out = _as_tuple(native(image))
            export_out = _as_tuple(exported(image))
            if len(native_out) != len(export_out):
                raise ParityError(
                    ParityReport(float("inf"), 0, (), n_inputs, threshold)
                )
            for oi, (a, b) in enumerate(zip(native_out, export_out)):
                dev = (a - b).abs()
                peak = float(dev.max())
                if peak > worst:
                    worst = peak
                    worst_output = oi
                    worst_position = tuple(
                        int(i) for i in torch.unravel_index(dev.argmax(), dev.shape)
                    )
    report = ParityReport(worst, worst_output, worst_position, n_inputs, threshold)
    if not report.passed:
        raise ParityError(report)
    return report


def assert_deterministic(graph_path: str | Path, n_inputs: int = 2, seed: int = 0) -> None:
    """Exported graphs must be pure functions: repeated calls agree exactly."""
    exported = torch.export.load(str(Path(graph_path))).module()
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _ in range(n_inputs):
            image = torch.rand(1, 3, INPUT_SIZE, INPUT_SIZE, generator=generator)
            first = _as_tuple(exported(image))
            second = _as_tuple(exported(image))
            for a, b in zip(first, second):
                if not torch.equal(a, b):
                    raise ParityError(
                        ParityReport(float((a - b).abs().max()), 0, (), n_inputs, 0.0)
                    )
