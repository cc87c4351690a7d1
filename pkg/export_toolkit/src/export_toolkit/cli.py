"""Command line: export backbone/segmentation graphs and verify parity."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportError, build_wrapped_model, export_backbone, export_segmentation
from .parity import ParityError, verify_parity
from .spec import ExportSpec, ExportSpecError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="objsim-export",
        description="Export backbone/segmentation graphs for the objsim runtime",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--source", default=None, help="registry name or module:factory")
    common.add_argument("--out", required=True, help="output graph file (.pt2)")
    common.add_argument("--seed", type=int, default=0, help="stand-in init seed")
    common.add_argument("--input-size", type=int, default=336)
    common.add_argument("--verify", type=int, metavar="N", default=None,
                        help="run parity verification on N random inputs (N >= 8)")

    p = sub.add_parser("backbone", parents=[common], help="export a patch-feature backbone")
    p.add_argument("--dim", type=int, default=None, help="expected feature dim D")

    sub.add_parser("segmentation", parents=[common], help="export a segmentation network")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    kind = args.command
    source = args.source or (
        "reference-backbone" if kind == "backbone" else "reference-segmenter"
    )
    try:
        spec = ExportSpec(
            source=source,
            kind=kind,
            feature_dim=getattr(args, "dim", None),
            input_size=args.input_size,
            seed=args.seed,
        )
        if kind == "backbone":
            manifest = export_backbone(spec, args.out)
        else:
            manifest = export_segmentation(spec, args.out)
        if args.verify is not None:
            report = verify_parity(args.out, build_wrapped_model(spec), args.verify)
            manifest["parity_max_deviation"] = report.max_deviation
    except (ExportSpecError, ExportError, ParityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
