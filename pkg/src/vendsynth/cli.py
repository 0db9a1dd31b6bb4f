"""Command-line entry point: ``vendsynth <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .pipeline import ConfigError, GeneratorConfig, config_from_dict, parse_config

EXAMPLE_CONFIG = """\
# vendsynth configuration; every key except library and textures is optional.
library: {library}
textures: {textures}
frames: 4
seed: 7
workers: 1
environment: {{width: 0.6, depth: 0.45, height: 0.45}}
camera:
  width: 1000
  height: 1000
  fx: 300.0
  fy: 300.0
  cx: 499.5
  cy: 499.5
  k: [0.02, -0.005, 0.0, 0.0]
  theta_max_deg: 75.0
lights: {{interior: [1, 5], exterior: [0, 3], intensity: [0.5, 2.0]}}
layout: {{keep_probability: 0.7, standing_probability: 0.5}}
deform: {{probability: 0.5, max_handles: 3, magnitude: 0.03}}
render: {{supersample: 2}}
labels: {{min_pixels: 25}}
"""


def _load(args) -> GeneratorConfig:
    cfg = parse_config(args.config)
    overrides = {k: v for k, v in (("seed", getattr(args, "seed", None)),
                                   ("frames", getattr(args, "frames", None)),
                                   ("workers", getattr(args, "workers", None))) if v is not None}
    if overrides:
        data = {**cfg.model_dump(mode="json"), **overrides}
        cfg = config_from_dict(data, cfg.base_dir)
    return cfg


def cmd_generate(args) -> int:
    from .pipeline import generate_dataset

    cfg = _load(args)
    manifest = generate_dataset(cfg, args.out)
    print(f"wrote {len(manifest['images'])} images and {len(manifest['annotations'])} boxes to {args.out}")
    if manifest["degenerate_frames"]:
        print(f"frames without visible objects: {manifest['degenerate_frames']}")
    return 0


def cmd_preview(args) -> int:
    from PIL import Image, ImageDraw

    from .pipeline import FrameContext
    from .render import to_uint8

    cfg = _load(args)
    _, res, ann = FrameContext(cfg).render(args.frame)
    im = Image.fromarray(to_uint8(res.image))
    draw = ImageDraw.Draw(im)
    for a in ann.boxes:
        b = a.bbox
        draw.rectangle([b.x, b.y, b.x + b.w - 1, b.y + b.h - 1], outline=(255, 40, 40), width=2)
        draw.text((b.x + 2, b.y + 1), str(a.category_id), fill=(255, 255, 0))
    im.save(args.out)
    print(f"frame {args.frame}: {len(ann.boxes)} boxes -> {args.out}")
    return 0


def cmd_losses(args) -> int:
    from .transfer import LossWeights, evaluate, load_batch

    weights = LossWeights(*args.weights)
    result = evaluate(load_batch(args.directory), weights)
    print(json.dumps(result, indent=1, sort_keys=True))
    return 0


def cmd_incircle(args) -> int:
    from PIL import Image

    from .layout import PlaneFullError, PlaneRegion, clearance_field, max_inscribed_circle
    from .pipeline import FrameContext
    from .geometry import Disc

    cfg = _load(args)
    ctx = FrameContext(cfg)
    sc = ctx.scene(args.frame)
    plane = ctx.cuboid.plane
    region = PlaneRegion(plane, tuple(Disc(tuple(o["center"]), o["radius"]) for o in sc.metadata["objects"]))
    n = args.resolution
    xs = np.linspace(plane.xmin, plane.xmax, n)
    zs = np.linspace(plane.zmin, plane.zmax, max(2, round(n * plane.depth / plane.width)))
    field = clearance_field(region, xs, zs)
    top = max(float(field.max()), 1e-12)
    gray = np.round(np.clip(field / top, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(gray).save(args.out)
    try:
        disc = max_inscribed_circle(region, grid=cfg.layout.grid)
        print(f"free-region incircle: centre ({disc.center[0]:.4f}, {disc.center[1]:.4f}) radius {disc.radius:.4f}")
    except PlaneFullError as exc:
        print(f"no incircle: {exc}")
    print(f"clearance field ({len(zs)}x{len(xs)}, max {top:.4f} m) -> {args.out}")
    return 0


def cmd_demo_assets(args) -> int:
    from .assets import write_demo_assets

    out = Path(args.out)
    lib, tex = write_demo_assets(out, seed=args.seed)
    cfg_path = out / "config.yaml"
    cfg_path.write_text(EXAMPLE_CONFIG.format(library=lib.name, textures=tex.name), encoding="utf-8")
    print(f"demo library {lib}, textures {tex}, config {cfg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vendsynth", description="Synthetic fisheye vending-machine datasets.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp, frames=True):
        sp.add_argument("--config", required=True, help="YAML configuration file")
        sp.add_argument("--seed", type=int, help="override the master seed")
        if frames:
            sp.add_argument("--frames", type=int, help="override the frame count")
            sp.add_argument("--workers", type=int, help="override the worker count")

    g = sub.add_parser("generate", help="render and label a dataset")
    config_args(g)
    g.add_argument("--out", required=True, help="dataset directory")
    g.set_defaults(func=cmd_generate)

    pv = sub.add_parser("preview", help="render one frame with its boxes drawn")
    config_args(pv, frames=False)
    pv.add_argument("--frame", type=int, default=0)
    pv.add_argument("--out", default="preview.png")
    pv.set_defaults(func=cmd_preview)

    ls = sub.add_parser("losses", help="evaluate the transfer losses on a batch directory")
    ls.add_argument("directory")
    ls.add_argument("--weights", type=float, nargs=3, default=(10.0, 3.0, 7.0),
                    metavar=("L1", "L2", "L3"), help="cycle, background and foreground weights")
    ls.set_defaults(func=cmd_losses)

    ic = sub.add_parser("incircle", help="write the free-region clearance field of a frame's layout")
    config_args(ic, frames=False)
    ic.add_argument("--frame", type=int, default=0)
    ic.add_argument("--resolution", type=int, default=400, help="samples across the plane width")
    ic.add_argument("--out", default="clearance.png")
    ic.set_defaults(func=cmd_incircle)

    da = sub.add_parser("demo-assets", help="write a procedural demo library, textures and config")
    da.add_argument("--out", required=True)
    da.add_argument("--seed", type=int, default=0)
    da.set_defaults(func=cmd_demo_assets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
