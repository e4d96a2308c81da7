"""Command-line entry point: configure adapters, then serve stdin/stdout."""

from __future__ import annotations

import argparse
import os
import sys

from .adapters import AdapterError
from .server import RunnerConfig, Server, StartupError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segrunner",
        description="Bridge-protocol model runner: line-delimited JSON requests on stdin, "
        "responses on stdout, tensors exchanged as files.",
    )
    parser.add_argument("--extractor", choices=("stub", "dinov3"), default="stub")
    parser.add_argument("--segmenter", choices=("stub", "sam2"), default="stub")
    parser.add_argument("--device", default=os.environ.get("SEGRUNNER_DEVICE", "cpu"))
    parser.add_argument(
        "--work-dir",
        default=None,
        help="directory for feature/mask exchange files (default: a fresh temp dir)",
    )
    parser.add_argument(
        "--dinov3-checkpoint",
        default=os.environ.get("SEGRUNNER_DINOV3_CHECKPOINT"),
        help="transformers checkpoint (local dir or hub id) for --extractor dinov3",
    )
    parser.add_argument(
        "--sam2-checkpoint",
        default=os.environ.get("SEGRUNNER_SAM2_CHECKPOINT"),
        help="checkpoint file for --segmenter sam2",
    )
    parser.add_argument(
        "--sam2-config",
        default=os.environ.get("SEGRUNNER_SAM2_CONFIG"),
        help="model config name matching the sam2 checkpoint",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = RunnerConfig(
        extractor=args.extractor,
        segmenter=args.segmenter,
        device=args.device,
        work_dir=args.work_dir,
        dinov3_checkpoint=args.dinov3_checkpoint,
        sam2_checkpoint=args.sam2_checkpoint,
        sam2_config=args.sam2_config,
    )
    try:
        server = Server(config)
    except (StartupError, AdapterError) as exc:
        print(f"segrunner startup failed: {exc}", file=sys.stderr)
        return 2

    print(
        f"segrunner ready: extractor={args.extractor}, segmenter={args.segmenter}, "
        f"work dir {server.work_dir}",
        file=sys.stderr,
        flush=True,
    )
    server.serve(sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
