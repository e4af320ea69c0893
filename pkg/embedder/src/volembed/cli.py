"""Command line entry point: ``volembed extract``."""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from . import __version__
from .errors import VolembedError
from .extract import ExtractionJob, extract
from .preprocess import Preprocess


def cmd_extract(args: argparse.Namespace) -> int:
    job = ExtractionJob(
        volume_paths=tuple(Path(p) for p in args.volumes),
        labels_path=Path(args.labels),
        model=args.model,
        preprocess=Preprocess(window_center=args.window_center,
                              window_width=args.window_width,
                              target_size=args.size),
        out_embeddings=Path(args.out),
        out_metadata=Path(args.out_metadata) if args.out_metadata else None,
    )
    report = extract(job)
    for path, reason in report.failures:
        print(f"skipped {path}: {reason}", file=sys.stderr)
    print(f"extracted {len(report.extracted)} volumes "
          f"({report.total_slices} slices, dim {report.dim}) -> {args.out}")
    return 0 if not report.failures else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volembed",
        description="Extract per-slice embeddings from volumes into an "
                    "embedding store plus metadata sidecar.")
    parser.add_argument("--version", action="version",
                        version=f"volembed {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed volumes and write the store")
    p.add_argument("volumes", nargs="+", help="input .nii / .nii.gz files")
    p.add_argument("--labels", required=True,
                   help="CSV: volume_id,task,tumor_stage,organ_slices")
    p.add_argument("--model", default="proj-256",
                   help="feature extractor id (default: proj-256)")
    p.add_argument("--window-center", type=float, default=40.0)
    p.add_argument("--window-width", type=float, default=400.0)
    p.add_argument("--size", type=int, default=224,
                   help="square input resolution fed to the model")
    p.add_argument("--out", required=True, help="output embedding store (.vemb)")
    p.add_argument("--out-metadata", default=None,
                   help="metadata JSONL path (default: next to --out)")
    p.set_defaults(func=cmd_extract)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VolembedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
