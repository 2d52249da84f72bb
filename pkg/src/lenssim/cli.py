"""Command-line pipeline: psf, degrade, blurmap, gates, bridge, dataset,
metrics.

Machine-readable results go to stdout as key=value lines; diagnostics go
to stderr. Exit status is 0 iff no operation reported an error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import io
from .blurmap import build_blur_index_map, compute_gate_maps
from .bridge import bridge_forward, pals_branches, random_weights
from .config import PipelineConfig, parse_config
from .dataset import build_dataset, image_metrics
from .degrade import apply_noise, degrade_image
from .errors import DimensionError, LensSimError
from .optics import WavefrontField, build_psf_grid, field_lattice

log = logging.getLogger("lenssim")


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("LENSSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer LENSSIM_THREADS=%r", env)
    return os.cpu_count() or 1


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return parse_config(args.config)
    return PipelineConfig()


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    deg = cfg.degradation
    updates = {}
    if getattr(args, "q", None) is not None:
        updates["q"] = args.q
    if getattr(args, "sigma", None) is not None:
        updates["sigma"] = args.sigma
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if updates:
        deg = dataclasses.replace(deg, **updates)
    return dataclasses.replace(cfg, degradation=deg)


def _write_plane(path: str, plane: np.ndarray) -> None:
    if path.endswith(".f32"):
        io.save_raw_f32(path, plane)
    else:
        io.save_image_u16(path, plane)


def cmd_psf(args) -> int:
    cfg = _load_config(args).optics
    fields = [WavefrontField(mode="zernike", zernike_coeffs=cfg.zernike,
                             field_position=pos)
              for pos in field_lattice(cfg.rows, cfg.cols)]
    grid = build_psf_grid(
        cfg.pupil_spec(), fields, cfg.wavelengths_m,
        detector_pitch=cfg.detector_pitch_m, rows=cfg.rows, cols=cfg.cols,
        size=cfg.psf_size, pad_factor=cfg.pad_factor,
        threads=_resolve_threads(args))
    io.write_psf_grid(args.out, grid)
    print(f"grid={args.out}")
    print(f"regions={grid.rows * grid.cols}")
    return 0


def _derive_patch_size(shape: tuple[int, int], rows: int,
                       cols: int) -> int:
    h, w = shape
    if h % rows != 0 or w % cols != 0 or h // rows != w // cols:
        raise DimensionError(
            f"image {h}x{w} does not tile into square patches on a "
            f"{rows}x{cols} grid")
    return h // rows


def cmd_degrade(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    grid = io.read_psf_grid(args.psf_grid)
    img = io.load_image(args.input)
    deg = dataclasses.replace(
        cfg.degradation,
        patch_size=_derive_patch_size(img.shape, grid.rows, grid.cols))
    blurred = degrade_image(img, grid, deg, threads=_resolve_threads(args))
    raw = apply_noise(blurred, deg)
    _write_plane(args.out, raw)
    print(f"out={args.out}")
    print(f"q_step={deg.q_step!r}")
    print(f"sigma={deg.sigma!r}")
    print(f"seed={deg.seed}")
    return 0


def cmd_blurmap(args) -> int:
    grid = io.read_psf_grid(args.psf_grid)
    cfg = _load_config(args).gates
    height = args.height or cfg.height
    width = args.width or cfg.width
    bmap = build_blur_index_map(grid, height, width)
    _write_plane(args.out, bmap.values)
    print(f"out={args.out}")
    print(f"k_min={float(bmap.values.min())!r}")
    print(f"k_max={float(bmap.values.max())!r}")
    return 0


def cmd_gates(args) -> int:
    grid = io.read_psf_grid(args.psf_grid)
    cfg = _load_config(args).gates
    bmap = build_blur_index_map(grid, args.height or cfg.height,
                                args.width or cfg.width)
    gates = compute_gate_maps(bmap, cfg.gate_params())
    for name, plane in (("s", gates.g_s), ("l", gates.g_l),
                        ("lap", gates.g_lap)):
        path = f"{args.out}_{name}.f32"
        io.save_raw_f32(path, plane)
        print(f"gate_{name}={path}")
    return 0


def cmd_bridge(args) -> int:
    cfg = _load_config(args)
    x = io.read_tensor(args.features)
    if args.weights:
        weights = io.read_bridge_weights(args.weights)
    else:
        weights = random_weights(x.shape[1], groups=cfg.bridge.groups,
                                 se_ratio=cfg.bridge.se_ratio,
                                 seed=args.seed or 0)
    grid = io.read_psf_grid(args.psf_grid)
    bmap = build_blur_index_map(grid, x.shape[2], x.shape[3])
    s, l, lam = pals_branches(x, weights)
    y = bridge_forward(x, bmap, cfg.gates.gate_params(), weights)
    io.write_tensor(args.out, y)
    for name, t in (("s", s), ("l", l), ("lap", lam)):
        io.write_tensor(f"{args.out}.{name}", t)
        print(f"branch_{name}={args.out}.{name}")
    print(f"out={args.out}")
    return 0


def cmd_dataset(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    grid = io.read_psf_grid(args.psf_grid)
    manifest_in = args.manifest or cfg.dataset.manifest_in
    out_dir = args.out or cfg.dataset.out_dir
    target = (cfg.dataset.target_width, cfg.dataset.target_height)
    deg = dataclasses.replace(
        cfg.degradation,
        patch_size=_derive_patch_size((target[1], target[0]),
                                      grid.rows, grid.cols))
    manifest_out = build_dataset(
        manifest_in, grid, deg, out_dir, target_size=target,
        master_seed=args.seed, psf_grid_id=args.psf_grid,
        threads=_resolve_threads(args))
    print(f"manifest={manifest_out}")
    return 0


def cmd_metrics(args) -> int:
    report = image_metrics(io.load_image(args.a), io.load_image(args.b))
    print(f"mse={report.mse!r}")
    print(f"psnr={report.psnr!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lenssim",
        description="Single-lens infrared degradation simulation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, psf_grid=False):
        p.add_argument("--config", help="TOML pipeline config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--quiet", action="store_true")
        if psf_grid:
            p.add_argument("--psf-grid", dest="psf_grid", required=True)

    p = sub.add_parser("psf", help="synthesize a PSF grid file")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_psf)

    p = sub.add_parser("degrade", help="degrade one image")
    common(p, psf_grid=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("blurmap", help="compute the blur-index map")
    common(p, psf_grid=True)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blurmap)

    p = sub.add_parser("gates", help="compute spatial gate maps")
    common(p, psf_grid=True)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--out", required=True,
                   help="output path prefix for the three gate planes")
    p.set_defaults(func=cmd_gates)

    p = sub.add_parser("bridge", help="run the bridge reference pass")
    common(p, psf_grid=True)
    p.add_argument("--features", required=True, help="input tensor file")
    p.add_argument("--weights", default=None,
                   help="weight file (omit for seeded random weights)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bridge)

    p = sub.add_parser("dataset", help="build a paired dataset")
    common(p, psf_grid=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("metrics", help="MSE/PSNR between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.ERROR if args.quiet else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LensSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
