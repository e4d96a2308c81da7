"""Command-line entry point.

Subcommands: build-memory, segment, evaluate, ablate, synth.  Every command
is deterministic given its flags and seeds (with the mock backend), and every
output directory gets a config.json echoing the exact configuration that
produced it.

Exit codes are a scripting contract:
    0 success, 1 usage, 2 I/O, 3 backend, 4 pipeline (e.g. no foreground).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import msfg
from .backends import Backend, load_rgb, make_backend, select_best
from .bank import build_bank, dedup, load_bank, save_bank
from .errors import (
    BackendError,
    BadMagicError,
    ChecksumMismatchError,
    MemosegError,
    MissingFileError,
    MissingManifestError,
    NoForegroundError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .grids import BinaryMask, downsample_mask
from .harness import (
    QueryCase,
    SplitSpec,
    ablate_bg,
    ablate_memory,
    prepare_query,
    render_comparison,
    run_pipeline,
    split_dataset,
)
from .matching import MatchConfig
from .prompts import FgStrategy, PromptPolicy, build_prompt_set, select_bg, select_fg
from .synth import FAMILIES, synth_dataset, write_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_BACKEND = 3
EXIT_PIPELINE = 4

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")

_IO_ERRORS = (
    OSError,
    MissingManifestError,
    MissingFileError,
    ChecksumMismatchError,
    BadMagicError,
    VersionMismatchError,
    TruncatedPayloadError,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; this contract reserves 2 for I/O."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def _echo_config(directory: Path, command: str, args: argparse.Namespace) -> None:
    skip = {"func"}
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    _write_json(directory / "config.json", {"command": command, "flags": flags})


def _parse_bg(value: str) -> int | None:
    if value == "all":
        return None
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"--bg expects 'all' or a non-negative integer, got {value!r}") from None
    if n < 0:
        raise ValueError(f"--bg count must be >= 0, got {n}")
    return n


def _match_config(args: argparse.Namespace) -> MatchConfig:
    return MatchConfig(tau_fg=args.tau_fg, tau_bg=args.tau_bg)


def _policy(args: argparse.Namespace) -> PromptPolicy:
    return PromptPolicy(fg_strategy=FgStrategy(args.fg_strategy), bg_top_n=_parse_bg(args.bg))


def _collect_pairs(images_dir: Path, masks_dir: Path) -> list[tuple[str, Path, Path]]:
    """Match images to masks by filename stem; abort listing every orphan."""
    if not images_dir.is_dir():
        raise FileNotFoundError(f"image directory {images_dir} does not exist")
    if not masks_dir.is_dir():
        raise FileNotFoundError(f"mask directory {masks_dir} does not exist")
    images = {p.stem: p for p in sorted(images_dir.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}
    masks = {p.stem: p for p in sorted(masks_dir.iterdir()) if p.suffix.lower() == ".png"}
    missing_masks = sorted(set(images) - set(masks))
    missing_images = sorted(set(masks) - set(images))
    if missing_masks or missing_images:
        parts = []
        if missing_masks:
            parts.append(f"images without masks: {', '.join(missing_masks)}")
        if missing_images:
            parts.append(f"masks without images: {', '.join(missing_images)}")
        raise FileNotFoundError("; ".join(parts))
    if not images:
        raise FileNotFoundError(f"no images found under {images_dir}")
    return [(stem, images[stem], masks[stem]) for stem in sorted(images)]


def _load_queries(pairs: list[tuple[str, Path, Path]], ids: list[str]) -> list[QueryCase]:
    by_id = {stem: (img, mask) for stem, img, mask in pairs}
    return [QueryCase(i, str(by_id[i][0]), msfg.read_mask(by_id[i][1])) for i in ids]


def _build_bank_items(pairs, backend: Backend):
    items = []
    for stem, image_path, mask_path in pairs:
        features = backend.extract_features(image_path)
        items.append((stem, str(image_path), msfg.read_mask(mask_path), features))
    return items


def _write_overlay(image_path: str, mask: BinaryMask, out_path: Path) -> None:
    """Prediction boundary drawn in red over the query image."""
    rgb = np.array(load_rgb(image_path))
    boundary = mask.data ^ ndimage.binary_erosion(mask.data)
    rgb[boundary] = (255, 0, 0)
    tmp = out_path.with_name(out_path.name + ".tmp")
    Image.fromarray(rgb).save(tmp, format="PNG")
    os.replace(tmp, out_path)


def _atomic_mask(mask: BinaryMask, out_path: Path) -> None:
    tmp = out_path.with_name(out_path.name + ".tmp")
    msfg.write_mask(mask, tmp)
    os.replace(tmp, out_path)


# ---------------------------------------------------------------------------
# commands


def cmd_build_memory(args: argparse.Namespace) -> int:
    pairs = _collect_pairs(Path(args.images), Path(args.masks))
    backend = make_backend(args.backend, timeout=args.timeout)
    try:
        bank = build_bank(_build_bank_items(pairs, backend))
    finally:
        backend.close()
    removed: list[str] = []
    if args.dedup_threshold is not None:
        bank, removed = dedup(bank, args.dedup_threshold)
        if removed:
            print(f"dedup removed {len(removed)}: {', '.join(removed)}")
    out = Path(args.out)
    save_bank(bank, out)
    _echo_config(out, "build-memory", args)
    print(f"memory bank: {len(bank)} entries -> {out}")
    return EXIT_OK


def cmd_segment(args: argparse.Namespace) -> int:
    bank = load_bank(args.memory)
    match = _match_config(args)
    policy = _policy(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    backend = make_backend(args.backend, timeout=args.timeout)
    try:
        # gt mask unknown here, so reuse the pipeline pieces directly
        case = QueryCase(Path(args.query).stem, args.query, BinaryMask(np.zeros((1, 1), bool)))
        prep = prepare_query(case, bank, backend, match)
        fg = select_fg(list(prep.fg_candidates), policy.fg_strategy)
        bg = select_bg(list(prep.bg_candidates), policy.bg_top_n, fg.point)
        if not bg:
            print("warning: zero background prompts; leakage is unconstrained", file=sys.stderr)
        prompts = build_prompt_set(fg, bg)
        pred = select_best(backend.segment(args.query, prompts))
    finally:
        backend.close()

    _atomic_mask(pred, out / "mask.png")
    _atomic_write_text(out / "prompts.json", prompts.to_json() + "\n")
    _write_json(
        out / "retrieval.json",
        {"exemplar_id": prep.exemplar.id, "similarity": prep.similarity},
    )
    _write_overlay(args.query, pred, out / "overlay.png")
    _echo_config(out, "segment", args)
    print(
        f"exemplar {prep.exemplar.id} (similarity {prep.similarity:.4f}); "
        f"{len(prompts)} prompts; mask {pred.fg_count} px -> {out}"
    )
    return EXIT_OK


def _split_cases(args: argparse.Namespace) -> tuple[list[QueryCase], list[QueryCase]]:
    data = Path(args.data)
    pairs = _collect_pairs(data / "images", data / "masks")
    ids = [stem for stem, _, _ in pairs]
    spec = SplitSpec(ratio=args.split_ratio, seed=args.split_seed)
    support_ids, query_ids = split_dataset(ids, spec)
    return _load_queries(pairs, support_ids), _load_queries(pairs, query_ids)


def cmd_evaluate(args: argparse.Namespace) -> int:
    support_cases, query_cases = _split_cases(args)
    chosen = support_cases if args.split == "support" else query_cases
    if not chosen:
        from .errors import EmptyInputError

        raise EmptyInputError(f"the {args.split} split is empty")
    bank = load_bank(args.memory)
    backend = make_backend(args.backend, timeout=args.timeout)
    try:
        report = run_pipeline(chosen, bank, backend, _match_config(args), _policy(args), args.jobs)
    finally:
        backend.close()
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report_path, report.to_json_obj())
    _write_json(
        report_path.with_name(report_path.name + ".config.json"),
        {"command": "evaluate", "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"}},
    )
    print(report.render_table())
    print(
        f"\naggregate: miou {report.miou:.4f}  mpa {report.mpa:.4f}  acc {report.acc:.4f}"
        f"  failures {report.n_failures}  report -> {report_path}"
    )
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    support_cases, query_cases = _split_cases(args)
    backend = make_backend(args.backend, timeout=args.timeout)
    try:
        items = [
            (c.id, c.image_path, c.gt_mask, backend.extract_features(c.image_path))
            for c in support_cases
        ]
        bank = build_bank(items)
        if args.mode == "bg":
            modes = tuple(_parse_bg(v.strip()) for v in args.bg_modes.split(","))
            rows = ablate_bg(
                query_cases,
                bank,
                backend,
                modes,
                _match_config(args),
                FgStrategy(args.fg_strategy),
            )
        else:
            sizes = tuple(int(v) for v in args.pool_sizes.split(","))
            rows = ablate_memory(
                query_cases,
                bank,
                backend,
                sizes,
                args.pool_seed,
                _match_config(args),
                _policy(args),
            )
    finally:
        backend.close()
    print(render_comparison(rows))
    if args.report:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        _write_json(
            report_path,
            {label: rep.to_json_obj() for label, rep in rows},
        )
        print(f"report -> {report_path}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    samples = synth_dataset(args.count, args.seed, args.family)
    out = Path(args.out)
    write_dataset(samples, out / "images", out / "masks")
    _echo_config(out, "synth", args)
    print(f"{len(samples)} {args.family} scenes -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="memoseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    backend_flags = _Parser(add_help=False)
    backend_flags.add_argument(
        "--backend", required=True, help="'mock' or 'bridge:CMD ARGS...' (external runner)"
    )
    backend_flags.add_argument(
        "--timeout", type=float, default=120.0, help="bridge request timeout in seconds"
    )

    pipeline_flags = _Parser(add_help=False)
    pipeline_flags.add_argument("--tau-fg", type=float, default=0.9, help="FG accept threshold")
    pipeline_flags.add_argument("--tau-bg", type=float, default=0.9, help="BG accept threshold")
    pipeline_flags.add_argument(
        "--fg-strategy",
        choices=[s.value for s in FgStrategy],
        default=FgStrategy.MOST_CONFIDENT.value,
        help="how the single FG anchor is chosen",
    )
    pipeline_flags.add_argument(
        "--bg", default="all", help="background budget: 'all', a count, or 0 for none"
    )

    split_flags = _Parser(add_help=False)
    split_flags.add_argument("--split-ratio", type=float, default=0.70)
    split_flags.add_argument("--split-seed", type=int, default=42)

    p = sub.add_parser("build-memory", parents=[backend_flags], help="extract and persist a bank")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dedup-threshold", type=float, default=None)
    p.set_defaults(func=cmd_build_memory)

    p = sub.add_parser(
        "segment", parents=[backend_flags, pipeline_flags], help="segment one query image"
    )
    p.add_argument("--query", required=True)
    p.add_argument("--memory", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser(
        "evaluate",
        parents=[backend_flags, pipeline_flags, split_flags],
        help="score the pipeline over a split",
    )
    p.add_argument("--split", choices=["support", "query"], default="query")
    p.add_argument("--data", required=True, help="directory holding images/ and masks/")
    p.add_argument("--memory", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "ablate",
        parents=[backend_flags, pipeline_flags, split_flags],
        help="sweep background budget or memory pool size",
    )
    p.add_argument("--mode", choices=["bg", "memory"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bg-modes", default="5,20,all", help="comma list for --mode bg")
    p.add_argument("--pool-sizes", default="1,10,20", help="comma list for --mode memory")
    p.add_argument("--pool-seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--family", choices=list(FAMILIES), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits on bad flags (and on --help); keep run() returning
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        for line in exc.transcript:
            print(f"  runner: {line}", file=sys.stderr)
        return EXIT_BACKEND
    except _IO_ERRORS as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NoForegroundError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        print("hint: no query patch cleared the FG threshold; try lowering --tau-fg", file=sys.stderr)
        return EXIT_PIPELINE
    except MemosegError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
