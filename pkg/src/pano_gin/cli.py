"""``pano-gin`` command line: project, mask, synth, train, infer, eval.

Exit codes: 0 success, 1 usage error (bad flags, missing inputs, bad config),
2 runtime failure (unloadable checkpoint, numerical failure).
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger("pano_gin")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _thread_limit():
    n = os.environ.get("PANO_GIN_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    try:
        limit = int(n)
    except ValueError:
        raise UsageError(f"PANO_GIN_THREADS must be an integer, got {n!r}") from None
    if limit < 1:
        raise UsageError(f"PANO_GIN_THREADS must be >= 1, got {limit}")
    return threadpool_limits(limit)


# ---------------------------------------------------------------- project

def cmd_project(args) -> int:
    from .cubemap import FACE_NAMES, cmp_to_erp, erp_to_cmp
    from .data import load_image, save_image

    if args.inverse:
        src = Path(args.input)
        paths = [src / f"face_{n}.png" for n in FACE_NAMES]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise UsageError(f"missing face files: {', '.join(missing)}")
        faces = np.stack([load_image(p) for p in paths])
        if faces.shape[2] != faces.shape[3]:
            raise UsageError(f"faces must be square, got {faces.shape[2:]}")
        height = args.height or 2 * faces.shape[-1]
        save_image(args.out, cmp_to_erp(faces, height))
        logger.info("wrote %s (%dx%d)", args.out, height, 2 * height)
        return 0
    if not Path(args.input).is_file():
        raise UsageError(f"input file not found: {args.input}")
    erp = load_image(args.input)
    if erp.shape[2] != 2 * erp.shape[1]:
        raise UsageError(f"ERP input must be twice as wide as high, got "
                         f"{erp.shape[1]}x{erp.shape[2]}")
    if args.face_size is None:
        raise UsageError("--face-size is required")
    faces = erp_to_cmp(erp, args.face_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, face in zip(FACE_NAMES, faces):
        save_image(out / f"face_{name}.png", face)
    logger.info("wrote six %dx%d faces to %s", args.face_size, args.face_size, out)
    return 0


# ---------------------------------------------------------------- mask

def cmd_mask(args) -> int:
    from .cubemap import cmp_to_erp
    from .data import save_image
    from .masks import MaskSpec, sample_mask

    try:
        spec = MaskSpec(args.lo, args.hi)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    faces = sample_mask(spec, args.face_size, np.random.default_rng(args.seed), args.sides_only)
    height = args.height or 2 * args.face_size
    erp = cmp_to_erp(faces[:, None], height, "nearest")[0]
    save_image(args.out, erp)
    logger.info("mask ratio %.4f in face space, %.4f in ERP space", faces.mean(), erp.mean())
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    from .data import save_image, synthetic_panorama

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.count):
        save_image(out / f"pano_{i:04d}.png", synthetic_panorama(args.height, rng))
    return 0


# ---------------------------------------------------------------- train

def _config_flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    from .train import TrainConfig

    group = p.add_argument_group("config overrides (flag > config file > default)")
    for f in dataclasses.fields(TrainConfig):
        default = getattr(TrainConfig, f.name)
        if f.name == "seed":
            continue  # global --seed
        if isinstance(default, bool):
            group.add_argument(_config_flag(f.name), dest=f"cfg_{f.name}", default=None,
                               action=argparse.BooleanOptionalAction,
                               help=f"(default {default})")
        else:
            group.add_argument(_config_flag(f.name), dest=f"cfg_{f.name}", default=None,
                               type=type(default), help=f"(default {default!r})")


def _train_config(args):
    from .train import ConfigError, TrainConfig, read_key_values

    values = {}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        values.update(read_key_values(args.config))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            values[f.name] = v
    if args.seed is not None:
        values["seed"] = args.seed
    if args.vanilla_conv:
        values["gated"] = False
    if args.no_cr:
        values["use_cr"] = False
    try:
        return TrainConfig.from_dict(values), values
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
    from .train import Trainer

    cfg, explicit = _train_config(args)
    if args.resume:
        try:
            trainer = load_checkpoint(args.resume, overrides=explicit)
        except CheckpointError as exc:
            logger.error("%s", exc)
            return 2
        cfg = trainer.config
    else:
        try:
            trainer = Trainer(cfg)
        except ValueError as exc:  # bad data directory or mismatched face size
            raise UsageError(str(exc)) from None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.txt")
    logger.info("training %d steps (gated=%s, cr=%s) into %s", cfg.steps, cfg.gated,
                cfg.use_cr, out)

    def progress(step, report):
        if step % 10 == 0 or step == cfg.steps:
            logger.info("step %d  l1_mask %.4f  total %.4f", step, report.l1_mask, report.total)

    try:
        trainer.run(cfg.steps, log_path=out / "loss.csv", checkpoint_dir=out / "checkpoints",
                    callback=progress)
    except FloatingPointError as exc:
        logger.error("training aborted: %s", exc)
        save_checkpoint(out / "failed", trainer)
        return 2
    save_checkpoint(out / "final", trainer)
    logger.info("final checkpoint: %s", out / "final")
    return 0


# ---------------------------------------------------------------- infer

def cmd_infer(args) -> int:
    from .checkpoint import CheckpointError, load_model
    from .cubemap import cmp_to_erp, erp_to_cmp
    from .data import load_image, load_mask, save_image
    from .train import inpaint

    for p in (args.input, args.mask):
        if not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")
    try:
        model, cfg = load_model(args.ckpt)
    except (CheckpointError, ValueError) as exc:
        logger.error("cannot load checkpoint %s: %s", args.ckpt, exc)
        return 2
    erp = load_image(args.input)
    mask = load_mask(args.mask)
    if erp.shape[2] != 2 * erp.shape[1]:
        raise UsageError(f"ERP input must be 2:1, got {erp.shape[1]}x{erp.shape[2]}")
    if mask.shape != erp.shape[1:]:
        raise UsageError(f"mask {mask.shape} does not match image {erp.shape[1:]}")
    s = cfg.face_size
    faces = erp_to_cmp(erp, s)
    face_mask = erp_to_cmp(mask[None], s, "nearest")[:, 0]
    out_faces = inpaint(model, faces[None], face_mask[None, :, None])[0]
    filled = cmp_to_erp(out_faces.astype(np.float64), erp.shape[1])
    result = np.where(mask[None] > 0, filled, erp)
    save_image(args.out, result)
    logger.info("wrote %s (%.2f%% of pixels inpainted)", args.out, 100 * mask.mean())
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    from .checkpoint import CheckpointError, load_model
    from .data import list_images, load_faces_dir
    from .evaluate import evaluate, parse_bins, write_report

    data = Path(args.data)
    if not data.is_dir() or not list_images(data):
        raise UsageError(f"no images found in {args.data}")
    try:
        bins = parse_bins(args.bins)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        model, cfg = load_model(args.ckpt)
    except (CheckpointError, ValueError) as exc:
        logger.error("cannot load checkpoint %s: %s", args.ckpt, exc)
        return 2
    try:
        faces, names = load_faces_dir(data, cfg.face_size, args.limit)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = 0 if args.seed is None else args.seed
    _, table = evaluate(model, faces, names, bins, seed, space=args.space,
                        masked_only=args.masked_only, grid_dir=args.grid_dir)
    write_report(args.out, table)
    for b in table:
        logger.info("bin %-8s n=%-3d PSNR %.2f  SSIM %.4f", b.label, b.count, b.psnr, b.ssim)
    return 0


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS so a subcommand's default never clobbers a value given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global RNG seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="debug logging")

    p = _Parser(prog="pano-gin", description="Panoramic cubemap inpainting toolkit.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("project", parents=[common], help="ERP <-> cubemap faces")
    sp.add_argument("--in", dest="input", required=True,
                    help="ERP image, or a face directory with --inverse")
    sp.add_argument("--out", required=True, help="face directory, or ERP file with --inverse")
    sp.add_argument("--face-size", type=int, help="face edge in pixels")
    sp.add_argument("--inverse", action="store_true", help="faces -> ERP")
    sp.add_argument("--height", type=int, help="ERP height for --inverse (default 2*face)")
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("mask", parents=[common], help="sample a free-form mask as an ERP PNG")
    sp.add_argument("--face-size", type=int, required=True, help="face edge in pixels")
    sp.add_argument("--lo", type=float, default=0.1, help="minimum face-space coverage")
    sp.add_argument("--hi", type=float, default=0.2, help="coverage upper bound (exclusive)")
    sp.add_argument("--height", type=int, help="ERP height (default 2*face)")
    sp.add_argument("--sides-only", action="store_true", help="only corrupt the side faces")
    sp.add_argument("--out", required=True, help="output mask PNG (white = missing)")
    sp.set_defaults(func=cmd_mask)

    sp = sub.add_parser("synth", parents=[common], help="write synthetic ERP panoramas")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--count", type=int, default=4, help="number of panoramas")
    sp.add_argument("--height", type=int, default=64, help="ERP height")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", parents=[common], help="train the inpainting model")
    sp.add_argument("--config", help="key=value config file")
    sp.add_argument("--resume", help="checkpoint directory to resume from")
    sp.add_argument("--vanilla-conv", action="store_true",
                    help="plain convolutions instead of gated ones")
    sp.add_argument("--no-cr", action="store_true", help="disable the side branch / CR loss")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", parents=[common], help="inpaint one ERP image")
    sp.add_argument("--ckpt", required=True, help="checkpoint directory")
    sp.add_argument("--in", dest="input", required=True, help="ERP image")
    sp.add_argument("--mask", required=True, help="ERP mask image (white = missing)")
    sp.add_argument("--out", required=True, help="output PNG")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", parents=[common], help="binned PSNR/SSIM report")
    sp.add_argument("--ckpt", required=True, help="checkpoint directory")
    sp.add_argument("--data", required=True, help="directory of ERP test images")
    sp.add_argument("--bins", default="0.1,0.2,0.3", help="upper edges of mask-ratio bins")
    sp.add_argument("--out", required=True, help="CSV report path")
    sp.add_argument("--space", choices=("erp", "faces"), default="erp",
                    help="compare reprojected panoramas or raw faces")
    sp.add_argument("--masked-only", action="store_true", help="PSNR over missing pixels only")
    sp.add_argument("--grid-dir", help="write input/output/ground-truth PNG grids here")
    sp.add_argument("--limit", type=int, help="evaluate at most this many images")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        logger.error("%s", exc)
        return 1
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
