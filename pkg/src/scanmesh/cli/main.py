"""Command-line interface.

Commands: gen, filter, refine, reconstruct, simplify, bake, finetune,
render, eval, run.  Global flags: --config, --seed, --out, --skip-to.
Exit code 0 on success; stage failures exit nonzero with the stage name.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from ..errors import ScanMeshError, StageError
from .config import PipelineConfig, load_config, serialize_config
from .pipeline import STAGES, PipelineRun


def _add_common(p):
    p.add_argument("--config", default=None, help="pipeline config file")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--out", required=True, help="output directory")


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen(args):
    from ..synthetic import SceneNoise, SceneSpec, generate_synthetic_scene
    from .bundle import write_bundle
    spec = SceneSpec(shape=args.shape, views=args.views,
                     image_size=(args.size, args.size))
    noise = SceneNoise(depth_sigma=args.depth_sigma,
                       outlier_fraction=args.outlier_fraction,
                       pixel_sigma=args.pixel_sigma)
    scene = generate_synthetic_scene(spec, noise, seed=args.seed or 0)
    write_bundle(args.out, scene.frames, priors=scene.priors,
                 tracks=scene.tracks, gt_mesh=scene.gt_mesh,
                 gt_poses=scene.gt_poses)
    print(f"wrote {args.views}-view '{args.shape}' bundle to {args.out}")
    return 0


def _stage_command(args, until: str, skip_to: str | None = None):
    cfg = _load_cfg(args)
    run = PipelineRun(args.bundle, args.out, cfg)
    run.run(skip_to=skip_to or args.skip_to, until=until)
    print(json.dumps(run.metrics, indent=2, sort_keys=True))
    return 0


def cmd_render(args):
    from PIL import Image
    from ..texture import TextureAtlas, rasterize
    from .bundle import read_bundle
    cfg = _load_cfg(args)
    run = PipelineRun(args.bundle, args.out, cfg)
    mesh, _, _ = run._load_textured()
    data = np.load(os.path.join(args.out, "finetune", "atlas.npz"))
    atlas = TextureAtlas(texels=data["texels"], valid=data["valid"])
    bundle = read_bundle(args.bundle)
    os.makedirs(args.render_out, exist_ok=True)
    for f in bundle.frames:
        buf = rasterize(mesh, atlas, f.intrinsics, f.pose,
                        (f.intrinsics.width, f.intrinsics.height))
        img = (np.clip(buf.color, 0, 1) * 255 + 0.5).astype(np.uint8)
        Image.fromarray(img).save(
            os.path.join(args.render_out, f"{f.frame_id:04d}.png"))
    print(f"rendered {len(bundle.frames)} views to {args.render_out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scanmesh",
        description="Textured mesh reconstruction from posed RGB-D frames")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene bundle")
    g.add_argument("--shape", default="sphere",
                   choices=["sphere", "box", "quad", "two_tone_quad",
                            "composite"])
    g.add_argument("--views", type=int, default=8)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--depth-sigma", type=float, default=0.0)
    g.add_argument("--outlier-fraction", type=float, default=0.0)
    g.add_argument("--pixel-sigma", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    stage_until = {
        "filter": "filter", "refine": "refine", "reconstruct": "stage2",
        "simplify": "simplify", "bake": "bake", "finetune": "finetune",
        "eval": "eval", "run": "eval",
    }
    for name, until in stage_until.items():
        p = sub.add_parser(name, help=f"run the pipeline through '{until}'")
        p.add_argument("bundle", help="scene bundle directory")
        _add_common(p)
        p.add_argument("--skip-to", default=None, choices=STAGES,
                       help="resume from cached artifacts at this stage")
        p.set_defaults(fn=lambda a, u=until: _stage_command(a, until=u))

    r = sub.add_parser("render", help="render all bundle views with the "
                                      "finetuned texture")
    r.add_argument("bundle")
    _add_common(r)
    r.add_argument("--render-out", required=True)
    r.add_argument("--skip-to", default=None)
    r.set_defaults(fn=cmd_render)

    c = sub.add_parser("config", help="print the default config file")
    c.set_defaults(fn=lambda a: (print(serialize_config(PipelineConfig()),
                                       end=""), 0)[1])

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 2
    except ScanMeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
