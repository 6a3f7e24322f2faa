"""End-to-end pipeline: filter -> pose refinement -> two-stage field
training -> mesh extraction/simplification -> texture bake + fine-tuning ->
evaluation.

Each stage writes its artifacts under the output directory together with a
manifest keyed by a content hash of its inputs and config section, so
reruns skip stages whose inputs did not change and --skip-to resumes from
cached artifacts.  The metrics report contains only deterministic values;
wall-clock timings go to a separate timings file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time

import numpy as np

from ..core import Frame, unproject_many
from ..depthfilter import filter_scene
from ..errors import StageError
from ..mesh import (build_uv_atlas, load_ply, marching_cubes,
                    quadric_simplify, save_obj, save_ply)
from ..neuralgeom.fields import GridField, MlpField
from ..neuralgeom.octree import build_sparse_voxels
from ..neuralgeom.priors import read_float_grid, write_float_grid
from ..neuralgeom.train import train_stage1, train_stage2
from ..sfm import BAProblem, Track, refine, triangulate
from ..texture import TextureAtlas, bake_initial_texture, finetune_texture, rasterize
from ..texture.seams import seam_discontinuity
from .bundle import SceneBundle, read_bundle, read_poses
from .config import PipelineConfig
from .metrics import chamfer_distance, psnr_ssim_report

STAGES = ["filter", "refine", "stage1", "octree", "stage2", "extract",
          "simplify", "bake", "finetune", "eval"]


def _hash_file(path: str, h):
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)


def _stage_hash(inputs: list[str], config_text: str) -> str:
    h = hashlib.sha256()
    h.update(config_text.encode())
    for p in inputs:
        if os.path.isfile(p):
            h.update(os.path.basename(p).encode())
            _hash_file(p, h)
        elif os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                fp = os.path.join(p, name)
                if os.path.isfile(fp):
                    h.update(name.encode())
                    _hash_file(fp, h)
    return h.hexdigest()


class PipelineRun:
    """Orchestrates stages over a bundle directory."""

    def __init__(self, bundle_dir: str, out_dir: str, cfg: PipelineConfig):
        self.bundle_dir = bundle_dir
        self.out = out_dir
        self.cfg = cfg
        os.makedirs(out_dir, exist_ok=True)
        self.timings: dict[str, float] = {}
        self.metrics: dict = {"seed": cfg.seed}
        self._bundle: SceneBundle | None = None

    # -- helpers ------------------------------------------------------------
    def bundle(self) -> SceneBundle:
        if self._bundle is None:
            self._bundle = read_bundle(self.bundle_dir)
        return self._bundle

    def stage_dir(self, name: str) -> str:
        d = os.path.join(self.out, name)
        os.makedirs(d, exist_ok=True)
        return d

    def _manifest_path(self, name: str) -> str:
        return os.path.join(self.out, name, "manifest.json")

    def _cached(self, name: str, key: str) -> bool:
        path = self._manifest_path(name)
        if not os.path.exists(path):
            return False
        with open(path) as fh:
            manifest = json.load(fh)
        if manifest.get("hash") != key:
            return False
        if "metrics" in manifest:
            self.metrics[name] = manifest["metrics"]
        return True

    def _mark(self, name: str, key: str):
        manifest = {"hash": key}
        if name in self.metrics:
            manifest["metrics"] = self.metrics[name]
        with open(self._manifest_path(name), "w") as fh:
            json.dump(manifest, fh)

    def _run_stage(self, name: str, inputs: list[str], cfg_text: str, fn,
                   force: bool):
        key = _stage_hash(inputs, cfg_text)
        if not force and self._cached(name, key):
            return
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = time.perf_counter() - t0
        self._mark(name, key)

    # -- stages -------------------------------------------------------------
    def run(self, skip_to: str | None = None, until: str | None = None):
        start = STAGES.index(skip_to) if skip_to else 0
        stop = STAGES.index(until) + 1 if until else len(STAGES)
        # Earlier stages come from cache; stages from skip_to onward rerun.
        for name in STAGES[:start]:
            path = self._manifest_path(name)
            if os.path.exists(path):
                with open(path) as fh:
                    manifest = json.load(fh)
                if "metrics" in manifest:
                    self.metrics[name] = manifest["metrics"]
        for name in STAGES[start:stop]:
            getattr(self, "stage_" + name)(force=skip_to is not None)
        self._write_reports()
        return self.metrics

    def _write_reports(self):
        with open(os.path.join(self.out, "metrics.json"), "w") as fh:
            json.dump(self.metrics, fh, indent=2, sort_keys=True)
        with open(os.path.join(self.out, "timings.json"), "w") as fh:
            json.dump(self.timings, fh, indent=2, sort_keys=True)

    def stage_filter(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("filter")

        def fn():
            frames = filter_scene(self.bundle().frames, cfg.filter)
            for f in frames:
                write_float_grid(os.path.join(out, f"{f.frame_id:04d}.bin"),
                                 f.depth)

        self._run_stage("filter", [os.path.join(self.bundle_dir, "depth"),
                                   os.path.join(self.bundle_dir, "conf"),
                                   os.path.join(self.bundle_dir, "poses.txt")],
                        self._cfg_text("filter"), fn, force)

    def _filtered_frames(self) -> list[Frame]:
        frames = []
        for f in self.bundle().frames:
            d = read_float_grid(os.path.join(self.out, "filter",
                                             f"{f.frame_id:04d}.bin"))
            frames.append(dataclasses.replace(f, depth=d.astype(np.float32)))
        return frames

    def stage_refine(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("refine")

        def fn():
            b = self.bundle()
            frames = self._filtered_frames()
            lines = []
            if b.tracks:
                poses = [f.pose for f in frames]
                intr = [f.intrinsics for f in frames]
                tracks = []
                for tr in b.tracks:
                    try:
                        X = triangulate([(poses[i], intr[i], px)
                                         for i, px in tr.observations])
                    except Exception:
                        continue
                    tracks.append(Track(point=X,
                                        observations=tr.observations))
                problem = BAProblem(
                    poses=poses, intrinsics=intr, tracks=tracks,
                    depth_maps=[f.depth for f in frames],
                    depth_intrinsics=[f.depth_intrinsics for f in frames],
                    depth_cfg=cfg.depth_factor)
                new_poses, _, history = refine(problem)
                self.metrics["refine"] = {
                    "initial_cost": history[0], "final_cost": history[-1],
                    "tracks": len(tracks)}
            else:
                new_poses = [f.pose for f in frames]
                self.metrics["refine"] = {"skipped": "no tracks"}
            for f, p in zip(frames, new_poses):
                lines.append(f"{f.frame_id} "
                             + " ".join(f"{x:.17g}" for x in (*p.q, *p.t)))
            with open(os.path.join(out, "poses.txt"), "w") as fh:
                fh.write("\n".join(lines) + "\n")

        self._run_stage("refine",
                        [os.path.join(self.out, "filter"),
                         os.path.join(self.bundle_dir, "tracks.txt"),
                         os.path.join(self.bundle_dir, "poses.txt")],
                        self._cfg_text("depth_factor"), fn, force)

    def _refined_frames(self) -> list[Frame]:
        poses = read_poses(os.path.join(self.out, "refine", "poses.txt"))
        return [dataclasses.replace(f, pose=poses[f.frame_id])
                for f in self._filtered_frames()]

    def _domain(self, frames: list[Frame]):
        pts = []
        for f in frames:
            d = f.depth
            vs, us = np.nonzero(d > 0)
            if len(vs) == 0:
                continue
            step = max(1, len(vs) // 2000)
            vs, us = vs[::step], us[::step]
            pix = np.stack([us.astype(np.float64), vs.astype(np.float64)],
                           axis=1)
            pts.append(unproject_many(f.depth_intrinsics, f.pose, pix,
                                      d[vs, us]))
        if not pts:
            raise ValueError("no valid depth left after filtering; relax "
                             "the filter settings for this capture")
        allp = np.concatenate(pts)
        lo = allp.min(axis=0)
        hi = allp.max(axis=0)
        pad = self.cfg.geometry.domain_padding * (hi - lo).max()
        return lo - pad, hi + pad

    def _make_fields(self, lo, hi):
        g = self.cfg.geometry
        if g.backend == "mlp":
            sdf = MlpField(lo, hi, out_dim=1, hidden=g.mlp_hidden,
                           layers=g.mlp_layers, geometric_init=True,
                           sphere_radius=g.init_radius_fraction,
                           seed=self.cfg.seed)
            color = MlpField(lo, hi, out_dim=3, hidden=g.mlp_hidden,
                             layers=g.mlp_layers, use_dirs=True,
                             sigmoid_output=True, seed=self.cfg.seed + 1)
        else:
            c = 0.5 * (np.asarray(lo) + np.asarray(hi))
            r = g.init_radius_fraction * 0.5 * (np.asarray(hi)
                                                - np.asarray(lo)).min()
            sdf = GridField.sphere_init(g.sdf_resolution, lo, hi,
                                        radius=r, center=c)
            color = GridField(g.color_resolution, lo, hi, out_dim=3,
                              init=np.full((g.color_resolution,) * 3 + (3,),
                                           0.4))
        return sdf, color

    def _train_split(self, frames):
        rng = np.random.default_rng(self.cfg.seed)
        n = len(frames)
        n_train = max(int(round((1 - self.cfg.output.heldout_fraction) * n)),
                      2)
        order = rng.permutation(n)
        train_idx = np.sort(order[:n_train])
        held_idx = np.sort(order[n_train:])
        return ([frames[i] for i in train_idx],
                [frames[i] for i in held_idx])

    def _cfg_text(self, *sections: str) -> str:
        """Hash key text from the seed plus only the named config
        sections, so an edit re-runs exactly the stages it affects."""
        import dataclasses as dc
        parts = [f"seed={self.cfg.seed}"]
        for s in sections:
            parts.append(f"{s}={dc.astuple(getattr(self.cfg, s))}")
        return ";".join(parts)

    def stage_stage1(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("stage1")

        def fn():
            frames = self._refined_frames()
            train, _ = self._train_split(frames)
            lo, hi = self._domain(frames)
            sdf, color = self._make_fields(lo, hi)
            state = train_stage1(train, self.bundle().priors, sdf, color,
                                 cfg.stage, cfg.render, seed=cfg.seed)
            np.savez(os.path.join(out, "fields.npz"),
                     sdf=sdf.get_params(), color=color.get_params(),
                     log_s=state.log_s, lo=lo, hi=hi)
            hist = np.array(state.history)
            np.save(os.path.join(out, "history.npy"), hist)
            self.metrics["stage1"] = {
                "iterations": int(len(hist)),
                "first_loss": float(hist[0, 0]) if len(hist) else 0.0,
                "final_loss": float(hist[-1, 0]) if len(hist) else 0.0,
            }
            mesh = marching_cubes(sdf, cfg.geometry.mc_resolution)
            save_ply(mesh, os.path.join(out, "mesh.ply"))

        self._run_stage("stage1",
                        [os.path.join(self.out, "refine"),
                         os.path.join(self.out, "filter"),
                         os.path.join(self.bundle_dir, "frames")],
                        self._cfg_text("stage", "render", "geometry",
                                       "output"), fn, force)

    def _load_fields(self, stage: str):
        data = np.load(os.path.join(self.out, stage, "fields.npz"))
        lo, hi = data["lo"], data["hi"]
        sdf, color = self._make_fields(lo, hi)
        sdf.set_params(data["sdf"])
        color.set_params(data["color"])
        return sdf, color, float(data["log_s"]), lo, hi

    def stage_octree(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("octree")

        def fn():
            mesh = load_ply(os.path.join(self.out, "stage1", "mesh.ply"))
            _, _, _, lo, hi = self._load_fields("stage1")
            oct_ = build_sparse_voxels(mesh, cfg.stage.octree_depth,
                                       lo=lo, hi=hi,
                                       dilation=cfg.stage.dilation)
            np.savez(os.path.join(out, "octree.npz"), occ=oct_.occupancy,
                     lo=oct_.lo, hi=oct_.hi, depth=oct_.depth)

        self._run_stage("octree", [os.path.join(self.out, "stage1")],
                        self._cfg_text("stage", "geometry"), fn, force)

    def stage_stage2(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("stage2")

        def fn():
            from ..neuralgeom.octree import SparseVoxelOctree
            from ..neuralgeom.train import TrainState
            sdf, color, log_s, lo, hi = self._load_fields("stage1")
            data = np.load(os.path.join(self.out, "octree", "octree.npz"))
            oct_ = SparseVoxelOctree(lo=data["lo"], hi=data["hi"],
                                     depth=int(data["depth"]),
                                     occupancy=data["occ"])
            frames = self._refined_frames()
            train, _ = self._train_split(frames)
            state = TrainState(sdf=sdf, color=color, log_s=log_s)
            state = train_stage2(train, state, oct_, cfg.stage, cfg.render,
                                 seed=cfg.seed + 1)
            np.savez(os.path.join(out, "fields.npz"),
                     sdf=sdf.get_params(), color=color.get_params(),
                     log_s=state.log_s, lo=lo, hi=hi)
            hist = np.array(state.history)
            np.save(os.path.join(out, "history.npy"), hist)
            self.metrics["stage2"] = {
                "iterations": int(len(hist)),
                "final_loss": float(hist[-1, 0]) if len(hist) else 0.0,
            }

        self._run_stage("stage2",
                        [os.path.join(self.out, "stage1"),
                         os.path.join(self.out, "octree")],
                        self._cfg_text("stage", "render", "geometry",
                                       "output"), fn, force)

    def stage_extract(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("extract")

        def fn():
            sdf, _, _, _, _ = self._load_fields("stage2")
            mesh = marching_cubes(sdf, cfg.geometry.mc_resolution)
            save_ply(mesh, os.path.join(out, "mesh.ply"))
            self.metrics["extract"] = {"faces": mesh.n_faces,
                                       "vertices": mesh.n_vertices}

        self._run_stage("extract", [os.path.join(self.out, "stage2")],
                        self._cfg_text("geometry"), fn, force)

    def stage_simplify(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("simplify")

        def fn():
            mesh = load_ply(os.path.join(self.out, "extract", "mesh.ply"))
            res = quadric_simplify(mesh, cfg.simplify)
            save_ply(res.mesh, os.path.join(out, "mesh.ply"))
            self.metrics["simplify"] = {
                "input_faces": mesh.n_faces,
                "output_faces": res.mesh.n_faces,
                "reached_target": res.reached_target,
            }

        self._run_stage("simplify", [os.path.join(self.out, "extract")],
                        self._cfg_text("simplify"), fn, force)

    def stage_bake(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("bake")

        def fn():
            from PIL import Image
            mesh = load_ply(os.path.join(self.out, "simplify", "mesh.ply"))
            mesh, layout = build_uv_atlas(mesh, cfg.output.atlas_size)
            frames = self._refined_frames()
            train, _ = self._train_split(frames)
            atlas, rep = bake_initial_texture(mesh, layout, train)
            np.savez(os.path.join(out, "atlas.npz"), texels=atlas.texels,
                     valid=atlas.valid, owner=layout.owner,
                     corners=layout.corners,
                     gutter_source=layout.gutter_source)
            Image.fromarray((np.clip(atlas.texels, 0, 1) * 255 + 0.5)
                            .astype(np.uint8)).save(
                os.path.join(out, "atlas.png"))
            Image.fromarray((atlas.valid * 255).astype(np.uint8)).save(
                os.path.join(out, "atlas_mask.png"))
            save_obj(mesh, os.path.join(out, "mesh.obj"),
                     texture_png="atlas.png")
            self.metrics["bake"] = {"fallback_faces": rep.fallback_faces}

        self._run_stage("bake",
                        [os.path.join(self.out, "simplify"),
                         os.path.join(self.out, "refine"),
                         os.path.join(self.bundle_dir, "frames")],
                        self._cfg_text("output"), fn, force)

    def _load_textured(self):
        from ..mesh.atlas import AtlasLayout
        from ..mesh import load_obj
        mesh = load_obj(os.path.join(self.out, "bake", "mesh.obj"))
        data = np.load(os.path.join(self.out, "bake", "atlas.npz"))
        atlas = TextureAtlas(texels=data["texels"], valid=data["valid"])
        S = atlas.size
        layout = AtlasLayout(size=S, cell=0, cells_per_row=0,
                             corners=data["corners"], owner=data["owner"],
                             valid=data["valid"],
                             gutter_source=data["gutter_source"])
        return mesh, atlas, layout

    def stage_finetune(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("finetune")

        def fn():
            from PIL import Image
            mesh, atlas, layout = self._load_textured()
            frames = self._refined_frames()
            train, held = self._train_split(frames)
            seam_before = seam_discontinuity(mesh, atlas, layout)
            tuned, rep = finetune_texture(mesh, atlas, train, cfg.finetune,
                                          layout=layout, heldout=held)
            seam_after = seam_discontinuity(mesh, tuned, layout)
            np.savez(os.path.join(out, "atlas.npz"), texels=tuned.texels,
                     valid=tuned.valid)
            Image.fromarray((np.clip(tuned.texels, 0, 1) * 255 + 0.5)
                            .astype(np.uint8)).save(
                os.path.join(out, "atlas.png"))
            Image.fromarray((tuned.valid * 255).astype(np.uint8)).save(
                os.path.join(out, "atlas_mask.png"))
            save_obj(mesh, os.path.join(out, "mesh.obj"),
                     texture_png="atlas.png")
            self.metrics["finetune"] = {
                "epochs": cfg.finetune.epochs,
                "initial_photo": rep.initial_photo,
                "final_photo": rep.final_photo,
                "seam_before": seam_before,
                "seam_after": seam_after,
                "heldout_psnr_before": rep.heldout_psnr_before,
                "heldout_psnr_after": rep.heldout_psnr_after,
            }

        self._run_stage("finetune",
                        [os.path.join(self.out, "bake"),
                         os.path.join(self.out, "refine"),
                         os.path.join(self.bundle_dir, "frames")],
                        self._cfg_text("finetune", "output"), fn, force)

    def stage_eval(self, force=False):
        cfg = self.cfg
        out = self.stage_dir("eval")

        def fn():
            mesh, _, _ = self._load_textured()
            data = np.load(os.path.join(self.out, "finetune", "atlas.npz"))
            atlas = TextureAtlas(texels=data["texels"], valid=data["valid"])
            frames = self._refined_frames()
            _, held = self._train_split(frames)
            rendered, reference = [], []
            for f in held:
                buf = rasterize(mesh, atlas, f.intrinsics, f.pose,
                                (f.intrinsics.width, f.intrinsics.height))
                rendered.append(np.clip(buf.color, 0, 1))
                reference.append(f.image)
            report = {}
            if rendered:
                report = psnr_ssim_report(rendered, reference)
            b = self.bundle()
            if b.gt_mesh is not None:
                simp = load_ply(os.path.join(self.out, "simplify",
                                             "mesh.ply"))
                report["chamfer"] = chamfer_distance(
                    simp, b.gt_mesh, samples=cfg.output.chamfer_samples,
                    seed=cfg.seed)
            self.metrics["eval"] = report
            with open(os.path.join(out, "report.json"), "w") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)

        self._run_stage("eval",
                        [os.path.join(self.out, "finetune"),
                         os.path.join(self.out, "simplify")],
                        self._cfg_text("output"), fn, force)


def run_pipeline(bundle_dir: str, out_dir: str, cfg: PipelineConfig,
                 skip_to: str | None = None, until: str | None = None):
    run = PipelineRun(bundle_dir, out_dir, cfg)
    return run.run(skip_to=skip_to, until=until)
