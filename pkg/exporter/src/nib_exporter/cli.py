"""Command line: `make-golden` produces model + dataset + golden fixture
bundles; `export-toy` writes just a toy model bundle + manifest."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportJob, export_fixtures, export_model
from .schema import EncoderConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nib-exporter")
    sub = parser.add_subparsers(dest="command", required=True)

    p_golden = sub.add_parser("make-golden", help="model + dataset + golden fixtures")
    p_golden.add_argument("--out", default="fixtures")
    p_golden.add_argument("--seed", type=int, default=0)
    p_golden.add_argument("--samples", type=int, default=4)

    p_toy = sub.add_parser("export-toy", help="toy model bundle + manifest only")
    p_toy.add_argument("--out", default="export")
    p_toy.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(config=EncoderConfig(), seed=args.seed, out_dir=args.out,
                    sample_count=getattr(args, "samples", 4))
    try:
        if args.command == "make-golden":
            path = export_fixtures(job)
        else:
            path = export_model(job)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
