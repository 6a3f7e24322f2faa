"""Pipeline orchestration tests at miniature scale: end-to-end execution,
bitwise-deterministic reruns, stage caching, resume, and the CLI."""

import filecmp
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from scanmesh.cli.bundle import write_bundle
from scanmesh.cli.config import (GeometryConfig, OutputConfig, PipelineConfig,
                                 serialize_config)
from scanmesh.cli.pipeline import run_pipeline
from scanmesh.depthfilter import FilterConfig
from scanmesh.mesh.simplify import SimplifyConfig
from scanmesh.neuralgeom.render import RenderConfig
from scanmesh.neuralgeom.train import StageConfig
from scanmesh.synthetic import SceneNoise, SceneSpec, generate_synthetic_scene
from scanmesh.texture.finetune import FinetuneConfig


def tiny_config(seed=3):
    return PipelineConfig(
        seed=seed,
        filter=FilterConfig(num_neighbors=2, min_inlier_ratio=0.5,
                            num_passes=1),
        stage=StageConfig(stage1_iters=60, stage2_iters=60,
                          rays_per_batch=128, octree_depth=5,
                          learning_rate=1e-3),
        render=RenderConfig(n_samples=24),
        geometry=GeometryConfig(sdf_resolution=24, color_resolution=16,
                                mc_resolution=32),
        simplify=SimplifyConfig(target_face_fraction=0.1),
        finetune=FinetuneConfig(epochs=8, lr_decay_epochs=(4, 6)),
        output=OutputConfig(atlas_size=128, chamfer_samples=800),
    )


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    scene = generate_synthetic_scene(
        SceneSpec(shape="sphere", views=6, image_size=(40, 40),
                  n_track_points=60),
        SceneNoise(pixel_sigma=0.3, pose_rot_sigma=0.004,
                   pose_trans_sigma=0.004),
        seed=0)
    d = str(tmp_path_factory.mktemp("scene") / "bundle")
    write_bundle(d, scene.frames, priors=scene.priors, tracks=scene.tracks,
                 gt_mesh=scene.gt_mesh, gt_poses=scene.gt_poses)
    return d


class TestPipeline:
    def test_end_to_end_artifacts(self, bundle_dir, tmp_path):
        out = str(tmp_path / "out")
        metrics = run_pipeline(bundle_dir, out, tiny_config())
        for stage in ("filter", "refine", "stage1", "octree", "stage2",
                      "extract", "simplify", "bake", "finetune", "eval"):
            assert os.path.isdir(os.path.join(out, stage))
        assert os.path.exists(os.path.join(out, "finetune", "mesh.obj"))
        assert os.path.exists(os.path.join(out, "finetune", "atlas.png"))
        assert "chamfer" in metrics["eval"]
        assert metrics["eval"]["mean_psnr"] > 10

    def test_rerun_bitwise_identical(self, bundle_dir, tmp_path):
        out1 = str(tmp_path / "a")
        out2 = str(tmp_path / "b")
        run_pipeline(bundle_dir, out1, tiny_config())
        run_pipeline(bundle_dir, out2, tiny_config())
        assert filecmp.cmp(os.path.join(out1, "metrics.json"),
                           os.path.join(out2, "metrics.json"), shallow=False)

    def test_cached_rerun_fast_and_stable(self, bundle_dir, tmp_path):
        out = str(tmp_path / "c")
        m0 = run_pipeline(bundle_dir, out, tiny_config())
        with open(os.path.join(out, "metrics.json")) as fh:
            first = fh.read()
        import time
        t0 = time.time()
        m1 = run_pipeline(bundle_dir, out, tiny_config())
        assert time.time() - t0 < 2.0
        with open(os.path.join(out, "metrics.json")) as fh:
            assert fh.read() == first

    def test_skip_to_resume(self, bundle_dir, tmp_path):
        out = str(tmp_path / "d")
        m0 = run_pipeline(bundle_dir, out, tiny_config())
        m1 = run_pipeline(bundle_dir, out, tiny_config(), skip_to="bake")
        assert m1["eval"] == m0["eval"]

    def test_config_change_invalidates_suffix(self, bundle_dir, tmp_path):
        import dataclasses
        out = str(tmp_path / "e")
        cfg = tiny_config()
        run_pipeline(bundle_dir, out, cfg)
        with open(os.path.join(out, "simplify", "manifest.json")) as fh:
            manifest_before = fh.read()
        with open(os.path.join(out, "stage1", "manifest.json")) as fh:
            stage1_before = fh.read()
        cfg2 = dataclasses.replace(
            cfg, simplify=SimplifyConfig(target_face_fraction=0.05))
        import time
        t0 = time.time()
        run_pipeline(bundle_dir, out, cfg2)
        # Only the suffix from simplify onward re-ran: training untouched.
        assert time.time() - t0 < 30
        with open(os.path.join(out, "simplify", "manifest.json")) as fh:
            assert fh.read() != manifest_before
        with open(os.path.join(out, "stage1", "manifest.json")) as fh:
            assert fh.read() == stage1_before


class TestCli:
    def test_gen_run_and_errors(self, tmp_path):
        bundle = str(tmp_path / "bundle")
        out = str(tmp_path / "out")
        cfg_path = str(tmp_path / "cfg.txt")
        with open(cfg_path, "w") as fh:
            fh.write(serialize_config(tiny_config(seed=1)))
        env = dict(os.environ)
        r = subprocess.run([sys.executable, "-m", "scanmesh.cli.main",
                            "gen", "--shape", "sphere", "--views", "4",
                            "--size", "24", "--seed", "1", "--out", bundle],
                           capture_output=True, text=True, env=env)
        assert r.returncode == 0, r.stderr
        r = subprocess.run([sys.executable, "-m", "scanmesh.cli.main",
                            "filter", bundle, "--config", cfg_path,
                            "--out", out],
                           capture_output=True, text=True, env=env)
        assert r.returncode == 0, r.stderr
        # Nonexistent bundle: nonzero exit with a stage tag.
        r = subprocess.run([sys.executable, "-m", "scanmesh.cli.main",
                            "filter", str(tmp_path / "nope"),
                            "--config", cfg_path, "--out", out],
                           capture_output=True, text=True, env=env)
        assert r.returncode != 0
        assert "filter" in r.stderr
