"""Command-line entry point: ``gmae <subcommand> [flags]``.

Exit codes: 0 success, 2 usage error (argparse), 3 invalid input or config,
4 missing checkpoint, 5 corrupt checkpoint, 6 checkpoint version mismatch,
7 checkpoint shape mismatch, 8 non-finite values, 9 gradient check failure,
10 unreadable image.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model
from .config import KEY_SECTION, PATH_KEYS, RunConfig, load_run_config, make_run_dir, write_config
from .data import list_images, load_image_folder
from .diagnostics import plot_centers_xy, plot_scale_vs_depth, save_layer_strip, save_prefix_strip
from .errors import GmaeError, GradcheckFailure, InvalidInputError
from .gaussians import GaussianSet, ScaleClamp, activate_parameters
from .gradcheck import format_table, run_gradcheck
from .imageio import load_image, load_mask, save_side_by_side
from .log import setup_logging
from .metrics import ImageMetrics, boundary_f1, build_report, iou, mask_boundary, mse, psnr
from .model import predict_raw
from .patches import make_mask
from .renderer import NUM_THREADS, render_gaussians
from .shapes import make_shape_corpus
from .training import Trainer, fit, format_float
from .zeroshot import (
    assign_layers,
    edge_detect,
    figure_ground,
    layer_renders,
    prefix_curve,
    sweep_figure_ground,
    write_edges,
    write_layers,
    write_mask,
)

logger = logging.getLogger("gmae")


@dataclass
class Source:
    """Gaussians to analyze, with the image they reconstruct."""

    stem: str
    image: np.ndarray
    gaussians: GaussianSet


def _overrides(args) -> dict:
    keys = set(KEY_SECTION) | set(PATH_KEYS) | {"preset"}
    return {k: v for k, v in vars(args).items() if k in keys}


def _output_dir(cfg: RunConfig) -> Path:
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return out
    return make_run_dir(cfg.train.seed)


def _masked_view(image: np.ndarray, grid, mask) -> np.ndarray:
    view = image.copy()
    view[grid.pixel_mask(mask.masked)] = 0.5
    return view


def _sources(args, cfg: RunConfig) -> list[Source]:
    """Gaussians from a fitted scene file, or from a checkpoint applied to input images."""
    if args.scene:
        with np.load(args.scene) as data:
            raw, image = data["raw"], data["image"]
            clamp = ScaleClamp(float(data["scale_clamp"]))
        return [Source(Path(args.scene).stem, image, activate_parameters(raw, clamp))]
    if not cfg.checkpoint or not args.input:
        raise InvalidInputError("need --scene, or --ckpt together with --input")
    model, _ = load_model(cfg.checkpoint)
    size = model.config.image_size
    n = model.config.grid.num_patches
    sources = []
    for i, path in enumerate(list_images(args.input)):
        image = load_image(path, size, size)
        mask = make_mask(n, args.view_mask_ratio, cfg.train.seed + i)
        raw = predict_raw(model, image[None], [mask])[0]
        sources.append(Source(path.stem, image, activate_parameters(raw, model.config.clamp)))
    return sources


def _camera(cfg: RunConfig, image: np.ndarray):
    h, w, _ = image.shape
    return replace(cfg.camera, height=h, width=w)


def _base_metrics(source: Source, cam) -> ImageMetrics:
    render = render_gaussians(source.gaussians, cam).image
    return ImageMetrics(name=source.stem, mse=mse(render, source.image), psnr=psnr(render, source.image))


def _truth_for(args, stem: str, shape) -> np.ndarray | None:
    if not args.truth:
        return None
    truth = Path(args.truth)
    if truth.is_dir():
        matches = [p for p in list_images(truth) if p.stem == stem]
        if not matches:
            logger.warning(f"no ground truth for {stem} in {truth}")
            return None
        truth = matches[0]
    return load_mask(truth, shape[0], shape[1])


def _write_report(out: Path, entries: list[ImageMetrics]) -> Path:
    path = out / "metrics.json"
    path.write_text(build_report(entries).model_dump_json(indent=2))
    logger.info(f"wrote {path}")
    return path


def cmd_train(args, cfg: RunConfig) -> int:
    size = cfg.model.image_size
    if args.shapes:
        images = make_shape_corpus(args.shapes, size, seed=cfg.train.seed).images
    elif cfg.data_dir:
        images = load_image_folder(cfg.data_dir, size)
    else:
        raise InvalidInputError("train needs --data DIR or --shapes N")
    run_dir = _output_dir(cfg)
    write_config(run_dir, cfg)
    logger.info(f"training on {len(images)} images, run directory {run_dir}")
    trainer = Trainer(images, cfg.model, cfg.train, run_dir, cam=cfg.camera, tiled=not args.naive)
    if args.resume:
        trainer.resume(args.resume)
    losses = trainer.train()
    if losses:
        logger.info(f"epoch loss {losses[0]:.5f} -> {losses[-1]:.5f}")
    return 0


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise InvalidInputError("reconstruct needs --ckpt")
    if not args.input:
        raise InvalidInputError("reconstruct needs --input")
    model, _ = load_model(cfg.checkpoint)
    size = model.config.image_size
    n = model.config.grid.num_patches
    cam = _camera(cfg, np.zeros((size, size, 3)))
    out = _output_dir(cfg)
    entries = []
    for i, path in enumerate(list_images(args.input)):
        image = load_image(path, size, size)
        mask = make_mask(n, args.view_mask_ratio, cfg.train.seed + i)
        raw = predict_raw(model, image[None], [mask])[0]
        render = render_gaussians(activate_parameters(raw, model.config.clamp), cam).image
        panels = [image, render] if len(mask.masked) == 0 else [image, _masked_view(image, model.grid, mask), render]
        save_side_by_side(out / f"{path.stem}_recon.png", panels)
        entries.append(ImageMetrics(name=path.stem, mse=mse(render, image), psnr=psnr(render, image)))
        logger.info(f"{path.stem}: PSNR {entries[-1].psnr:.2f} dB")
    _write_report(out, entries)
    return 0


def cmd_layers(args, cfg: RunConfig) -> int:
    zs = cfg.zeroshot
    out = _output_dir(cfg)
    for src in _sources(args, cfg):
        cam = _camera(cfg, src.image)
        stack = assign_layers(src.gaussians, zs.layers, zs.group_mode, zs.threshold, cam, zs.policy)
        write_layers(out, src.stem, stack)
        save_layer_strip(out / f"{src.stem}_layerwise_d{zs.layers}.png", layer_renders(src.gaussians, stack, cam))
        logger.info(f"{src.stem}: {int(np.count_nonzero(stack.assigned))} of {stack.index.size} pixels layered")
    return 0


def cmd_edges(args, cfg: RunConfig) -> int:
    zs = cfg.zeroshot
    out = _output_dir(cfg)
    counts = args.edge_layers or [zs.layers]
    entries = []
    for src in _sources(args, cfg):
        cam = _camera(cfg, src.image)
        truth = _truth_for(args, src.stem, src.image.shape)
        for d in counts:
            stack = assign_layers(src.gaussians, d, zs.group_mode, zs.threshold, cam, zs.policy)
            edges = edge_detect(stack)
            write_edges(out, src.stem, edges)
            logger.info(f"{src.stem}: d={d}, {edges.count} edge pixels")
            if truth is not None:
                entry = _base_metrics(src, cam)
                entry.name = f"{src.stem}_d{d}"
                entry.boundary_f1 = boundary_f1(edges.edges, mask_boundary(truth))
                entries.append(entry)
    if entries:
        _write_report(out, entries)
    return 0


def cmd_segment(args, cfg: RunConfig) -> int:
    zs = cfg.zeroshot
    out = _output_dir(cfg)
    entries = []
    for src in _sources(args, cfg):
        cam = _camera(cfg, src.image)
        stack = assign_layers(src.gaussians, zs.layers, zs.group_mode, zs.threshold, cam, zs.policy)
        truth = _truth_for(args, src.stem, src.image.shape)
        entry = _base_metrics(src, cam)
        if truth is not None and zs.split is None:
            sweep = sweep_figure_ground(stack, truth)
            split = sweep.best_split
            logger.info(f"{src.stem}: IoU by split " + " ".join(f"{v:.3f}" for v in sweep.ious))
        else:
            split = zs.default_split
        seg = figure_ground(stack, split)
        write_mask(out, src.stem, seg)
        entry.split = split
        if truth is not None:
            entry.iou = iou(seg.mask, truth)
            logger.info(f"{src.stem}: split {split}, IoU {entry.iou:.3f}")
        entries.append(entry)
    _write_report(out, entries)
    return 0


def cmd_prefix_render(args, cfg: RunConfig) -> int:
    out = _output_dir(cfg)
    for src in _sources(args, cfg):
        cam = _camera(cfg, src.image)
        schedule, renders, diffs = prefix_curve(src.gaussians, cam)
        save_prefix_strip(out / f"{src.stem}_prefix.png", schedule, renders, target=src.image)
        with open(out / f"{src.stem}_prefix_curve.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["k", "mean_abs_diff"])
            for k, d in zip(schedule, diffs):
                writer.writerow([k, format_float(d)])
    return 0


def cmd_diag(args, cfg: RunConfig) -> int:
    out = _output_dir(cfg)
    for src in _sources(args, cfg):
        cam = _camera(cfg, src.image)
        plot_scale_vs_depth(src.gaussians, cam, out / f"{src.stem}_scale_depth.png", title=src.stem)
        plot_centers_xy(src.gaussians, out / f"{src.stem}_centers_xy.png", title=src.stem)
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    rows = run_gradcheck(
        seed=cfg.train.seed,
        single_scenes=args.single_scenes,
        multi_scenes=args.multi_scenes,
        backbone_coords=args.backbone_coords,
    )
    print(format_table(rows))
    failed = [r.name for r in rows if not r.passed]
    if failed:
        raise GradcheckFailure(f"gradient check failed for: {', '.join(failed)}")
    return 0


def cmd_fit(args, cfg: RunConfig) -> int:
    if not args.input:
        raise InvalidInputError("fit needs --input")
    out = _output_dir(cfg)
    size = cfg.model.image_size
    for path in list_images(args.input):
        image = load_image(path, size, size)
        result = fit(
            image, args.k, args.steps, lr=args.lr, cam=_camera(cfg, image),
            clamp=cfg.model.clamp, seed=cfg.train.seed, tiled=not args.naive,
        )
        np.savez(out / f"{path.stem}.npz", raw=result.raw, image=image, scale_clamp=cfg.model.scale_clamp)
        save_side_by_side(out / f"{path.stem}_fit.png", [image, result.image])
        with open(out / f"{path.stem}_fit_loss.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss"])
            writer.writerows([i, format_float(v)] for i, v in enumerate(result.losses))
        logger.info(f"{path.stem}: fit PSNR {psnr(result.image, image):.2f} dB")
    return 0


COMMANDS = {
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "layers": cmd_layers,
    "edges": cmd_edges,
    "segment": cmd_segment,
    "prefix-render": cmd_prefix_render,
    "gradcheck": cmd_gradcheck,
    "diag": cmd_diag,
    "fit": cmd_fit,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Flat key = value config file")
    p.add_argument("--preset", help="Model preset (desk, tiny, gradcheck)")
    p.add_argument("--seed", type=int, help="Random seed (default: 0)")
    p.add_argument("--out", dest="output_dir", help="Output directory (default: a new run directory)")
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")


def _add_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ckpt", dest="checkpoint", help="Checkpoint file")
    p.add_argument("--input", help="Image file or directory")
    p.add_argument("--scene", help="Scene file written by 'gmae fit'")
    p.add_argument(
        "--mask-ratio", dest="view_mask_ratio", type=float, default=0.0,
        help="Masking ratio applied to the input (default: 0, fully visible)",
    )
    p.add_argument("--layers", type=int, help="Number of depth groups d")
    p.add_argument("--group-mode", dest="group_mode", choices=["equal_count", "equal_depth_width"])
    p.add_argument("--threshold", type=float, help="Max-channel color change that assigns a layer")
    p.add_argument("--policy", choices=["first", "last"])
    p.add_argument("--truth", help="Ground-truth foreground mask file or directory (matched by file stem)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmae",
        description="Gaussian masked autoencoders at desk scale",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    gmae train --shapes 2000 --preset tiny --epochs 50
    gmae reconstruct --ckpt runs/x/checkpoint_epoch0050.gmae --input img.png --mask-ratio 0.0
    gmae fit --input img.png --k 512 --steps 2000
    gmae layers --scene runs/y/img.npz --layers 16
    gmae gradcheck --seed 1
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Masked-autoencoder pre-training")
    _add_common(p)
    p.add_argument("--data", dest="data_dir", help="Directory of training images")
    p.add_argument("--shapes", type=int, help="Train on N procedurally generated shape images instead")
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--mask-ratio", dest="mask_ratio", type=float)
    p.add_argument("--loss-mode", dest="loss_mode", choices=["masked", "all", "masked_normalized"])
    p.add_argument("--num-queries", dest="num_queries", type=int, help="Gaussians per image (k)")
    p.add_argument("--randaug", action="store_const", const=True, help="Enable RandAugment (9, 0.5)")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--resume", metavar="CKPT", help="Continue from an epoch checkpoint of the same run settings")
    p.add_argument("--naive", action="store_true", help="Use the untiled renderer")

    p = sub.add_parser("reconstruct", help="Render reconstructions and a metrics report")
    _add_common(p)
    p.add_argument("--ckpt", dest="checkpoint", required=True)
    p.add_argument("--input", required=True, help="Image file or directory")
    p.add_argument("--mask-ratio", dest="view_mask_ratio", type=float, default=0.75)

    for name, help_text in (
        ("layers", "Depth-layer index maps"),
        ("segment", "Figure-ground masks"),
        ("prefix-render", "Renders of the K nearest Gaussians"),
        ("diag", "Scale-vs-depth and center plots"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_source(p)
        if name == "segment":
            p.add_argument("--split", type=int, help="Split index t (default: swept against --truth, else d/2)")

    p = sub.add_parser("edges", help="Edges from layer-index discontinuities")
    _add_common(p)
    _add_source(p)
    p.add_argument(
        "--edge-layers", dest="edge_layers", type=int, nargs="+", help="Layer counts to compare, e.g. 8 16 32"
    )

    p = sub.add_parser("gradcheck", help="Finite-difference gradient check")
    _add_common(p)
    p.add_argument("--single-scenes", type=int, default=100)
    p.add_argument("--multi-scenes", type=int, default=20)
    p.add_argument("--backbone-coords", type=int, default=100)

    p = sub.add_parser("fit", help="Fit Gaussians directly to an image")
    _add_common(p)
    p.add_argument("--input", required=True, help="Image file or directory")
    p.add_argument("--k", type=int, default=512, help="Number of Gaussians")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--naive", action="store_true", help="Use the untiled renderer")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(verbose=args.verbose, quiet=args.quiet)
    if os.environ.get("GMAE_NUM_THREADS"):
        torch.set_num_threads(NUM_THREADS)
    try:
        cfg = load_run_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except GmaeError as e:
        logger.error(str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
