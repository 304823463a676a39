"""Command-line entry point: ``raindropsep {train,eval,infer,decompose,synth}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .data import (
    DatasetError,
    LAYOUTS,
    SyntheticSpec,
    build_manifest,
    list_images,
    load_image,
    save_image,
    synthesize,
    write_synthetic,
)
from .metrics import evaluate_pairs
from .render import colorbar, heatmap
from .training import (
    ABLATIONS,
    DETERMINISTIC_ENV,
    CheckpointError,
    NumericAbort,
    TrainConfig,
    coerce_value,
    fit,
    load_generator,
    read_config_file,
    set_determinism,
)
from .validation import check_divisible, pad_to_multiple

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("raindropsep")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "ablation":
            p.add_argument(flag, action="append", choices=ABLATIONS, default=argparse.SUPPRESS,
                           help="disable a component; repeatable (default: none)")
        elif isinstance(f.default, bool):
            p.add_argument(flag, default=argparse.SUPPRESS, metavar="BOOL",
                           help=f"(default: {f.default})")
        else:
            p.add_argument(flag, default=argparse.SUPPRESS, metavar=type(f.default).__name__.upper(),
                           help=f"(default: {f.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raindropsep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress (default: False)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on unpaired rainy/clean directories")
    p.add_argument("--config", type=Path, help="key = value config file (default: None)")
    p.add_argument("--rainy-dir", type=Path, required=True, help="rainy images (required)")
    p.add_argument("--clean-dir", type=Path, required=True, help="clean images (required)")
    p.add_argument("--out-dir", type=Path, required=True,
                   help="checkpoints, metrics.tsv and config.txt go here (required)")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from (default: None)")
    _add_config_flags(p)

    pad_help = "reflect-pad to a multiple of 4 and crop back (default: False)"

    p = sub.add_parser("decompose", help="write per-iteration layers for one image")
    p.add_argument("--checkpoint", type=Path, required=True, help="(required)")
    p.add_argument("--image", type=Path, required=True, help="(required)")
    p.add_argument("--out-dir", type=Path, required=True, help="(required)")
    p.add_argument("--pad", action="store_true", help=pad_help)

    p = sub.add_parser("infer", help="write the final clean background for every image")
    p.add_argument("--checkpoint", type=Path, required=True, help="(required)")
    p.add_argument("--input-dir", type=Path, required=True, help="(required)")
    p.add_argument("--out-dir", type=Path, required=True, help="(required)")
    p.add_argument("--pad", action="store_true", help=pad_help)

    p = sub.add_parser("eval", help="PSNR/SSIM of backgrounds against paired ground truth")
    p.add_argument("--checkpoint", type=Path, required=True, help="(required)")
    p.add_argument("--data-root", type=Path, required=True,
                   help="paired test set root (required)")
    p.add_argument("--layout", choices=sorted(LAYOUTS), default="flat", help="(default: flat)")
    p.add_argument("--report", type=Path, required=True, help="output table path (required)")
    p.add_argument("--out-dir", type=Path,
                   help="also save the backgrounds here (default: None)")
    p.add_argument("--pad", action="store_true", help=pad_help)

    p = sub.add_parser("synth", help="write a synthetic raindrop corpus")
    defaults = SyntheticSpec()
    p.add_argument("--out-dir", type=Path, required=True, help="(required)")
    p.add_argument("--count", type=int, default=defaults.count, help=f"(default: {defaults.count})")
    p.add_argument("--size", type=int, default=defaults.size, help=f"(default: {defaults.size})")
    p.add_argument("--channels", type=int, choices=(1, 3), default=defaults.channels,
                   help=f"(default: {defaults.channels})")
    p.add_argument("--droplets", type=int, nargs=2, default=list(defaults.droplets),
                   metavar=("MIN", "MAX"), help=f"droplets per image (default: {defaults.droplets})")
    p.add_argument("--radius", type=float, nargs=2, default=list(defaults.radius),
                   metavar=("MIN", "MAX"), help=f"droplet radius px (default: {defaults.radius})")
    p.add_argument("--aspect", type=float, nargs=2, default=list(defaults.aspect),
                   metavar=("MIN", "MAX"), help=f"ellipse aspect (default: {defaults.aspect})")
    p.add_argument("--feather", type=float, default=defaults.feather,
                   help=f"mask edge width px (default: {defaults.feather})")
    p.add_argument("--blur", type=float, default=defaults.blur,
                   help=f"raindrop-layer blur sigma (default: {defaults.blur})")
    p.add_argument("--fill-weight", type=float, default=defaults.fill_weight,
                   help=f"background share inside drops (default: {defaults.fill_weight})")
    p.add_argument("--seed", type=int, default=defaults.seed, help=f"(default: {defaults.seed})")
    return parser


def _deterministic_from_env() -> bool | None:
    raw = os.environ.get(DETERMINISTIC_ENV)
    if raw is None:
        return None
    return raw.strip().lower() not in ("0", "false", "no", "off", "")


def _train_config(args) -> TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    env = _deterministic_from_env()
    if env is not None:
        values["deterministic"] = env
    for f in dataclasses.fields(TrainConfig):
        if not hasattr(args, f.name):
            continue
        raw = getattr(args, f.name)
        values[f.name] = raw if f.name == "ablation" else coerce_value(f.name, raw)
    return TrainConfig.from_dict(values)


def cmd_train(args) -> int:
    for d in (args.rainy_dir, args.clean_dir):
        if not d.is_dir():
            raise DatasetError(f"directory not found: {d}")
    try:
        config = _train_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    final = fit(config, args.rainy_dir, args.clean_dir, args.out_dir, resume_from=args.resume)
    print(final)
    return EXIT_OK


def _load(checkpoint):
    env = _deterministic_from_env()
    set_determinism(True if env is None else env)
    return load_generator(checkpoint)


def _run(generator, img, pad: bool):
    if pad:
        img, (h, w) = pad_to_multiple(img)
    else:
        check_divisible(img.shape)
        h, w = img.shape[-2:]
    with torch.no_grad():
        trace = generator(torch.from_numpy(np.ascontiguousarray(img[None])))
    crop = lambda seq: [t[0, :, :h, :w].numpy() for t in seq]  # noqa: E731
    return (crop(trace.backgrounds), crop(trace.raindrops), crop(trace.masks),
            crop(trace.reconstructions))


def cmd_decompose(args) -> int:
    g = _load(args.checkpoint)
    img = load_image(args.image, g.channels)
    backgrounds, raindrops, masks, recons = _run(g, img, args.pad)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stem = args.image.stem
    for i, (b, r, a, rec) in enumerate(zip(backgrounds, raindrops, masks, recons), 1):
        save_image(b, out / f"{stem}_background_iter{i}.png")
        save_image(r, out / f"{stem}_raindrop_iter{i}.png")
        save_image(heatmap(a), out / f"{stem}_mask_iter{i}.png")
        save_image(rec, out / f"{stem}_reconstruction_iter{i}.png")
    save_image(colorbar(), out / "mask_colorbar.png")
    return EXIT_OK


def _infer_dir(g, paths, out_dir, pad):
    results = []
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        background = _run(g, load_image(path, g.channels), pad)[0][-1]
        if out_dir is not None:
            save_image(background, out_dir / path.name)
        results.append(background)
    return results


def cmd_infer(args) -> int:
    g = _load(args.checkpoint)
    paths = list_images(args.input_dir)
    if not paths:
        raise DatasetError(f"no images found in {args.input_dir}")
    _infer_dir(g, paths, args.out_dir, args.pad)
    return EXIT_OK


def cmd_eval(args) -> int:
    g = _load(args.checkpoint)
    manifest = build_manifest(args.data_root, args.layout, "paired")
    outputs = _infer_dir(g, manifest.rainy_paths, args.out_dir, args.pad)
    # quantise like a saved PNG so the report matches files on disk
    outputs = [np.round(o * 255) / 255 for o in outputs]
    truths = [load_image(p, g.channels) for p in manifest.clean_paths]
    report = evaluate_pairs(outputs, truths)
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(report.table([p.name for p in manifest.rainy_paths]))
    print(f"PSNR {report.psnr_db:.4f} dB  SSIM {report.ssim:.4f}  ({report.count} pairs)")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(count=args.count, size=args.size, channels=args.channels,
                             droplets=tuple(args.droplets), radius=tuple(args.radius),
                             aspect=tuple(args.aspect), feather=args.feather, blur=args.blur,
                             fill_weight=args.fill_weight, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(write_synthetic(synthesize(spec), args.out_dir))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "decompose": cmd_decompose, "infer": cmd_infer,
            "eval": cmd_eval, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"raindropsep {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as exc:
        print(f"raindropsep {args.command}: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CheckpointError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"raindropsep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
