"""Synthetic scene generator contracts: determinism, geometric exactness,
noise injection, and track validity."""

import numpy as np
import pytest

from scanmesh.core import project, unproject
from scanmesh.depthfilter import FilterConfig, filter_scene
from scanmesh.errors import InvalidSpec
from scanmesh.synthetic import SceneNoise, SceneSpec, generate_synthetic_scene


class TestDeterminism:
    def test_same_seed_bitwise_identical(self):
        spec = SceneSpec(shape="composite", views=4, image_size=(32, 32),
                         n_track_points=40)
        noise = SceneNoise(depth_sigma=0.01, outlier_fraction=0.1,
                           pixel_sigma=0.5)
        a = generate_synthetic_scene(spec, noise, seed=9)
        b = generate_synthetic_scene(spec, noise, seed=9)
        for fa, fb in zip(a.frames, b.frames):
            assert (fa.image == fb.image).all()
            assert (fa.depth == fb.depth).all()
            np.testing.assert_array_equal(fa.pose.q, fb.pose.q)
        assert len(a.tracks) == len(b.tracks)

    def test_unknown_shape_rejected(self):
        with pytest.raises(InvalidSpec):
            generate_synthetic_scene(SceneSpec(shape="torus", views=3))

    def test_too_few_views_rejected(self):
        with pytest.raises(InvalidSpec):
            generate_synthetic_scene(SceneSpec(views=1))


class TestGeometry:
    @pytest.mark.parametrize("shape", ["sphere", "box", "quad", "composite"])
    def test_depth_matches_sdf_zero(self, shape):
        scene = generate_synthetic_scene(
            SceneSpec(shape=shape, views=3, image_size=(24, 24),
                      n_track_points=5), seed=1)
        f = scene.frames[0]
        vs, us = np.nonzero(f.depth > 0)
        step = max(1, len(vs) // 50)
        for v, u in zip(vs[::step], us[::step]):
            X = unproject(f.depth_intrinsics, f.pose, [u, v],
                          float(f.depth[v, u]))
            assert abs(scene.shape.sdf(X[None])[0]) < 1e-6

    def test_tracks_project_exactly(self):
        scene = generate_synthetic_scene(
            SceneSpec(shape="sphere", views=5, image_size=(48, 48),
                      n_track_points=50), seed=2)
        assert len(scene.tracks) > 20
        for tr in scene.tracks[:20]:
            for i, pix in tr.observations:
                p, z = project(scene.frames[i].intrinsics, scene.gt_poses[i],
                               tr.point)
                np.testing.assert_allclose(pix, p, atol=1e-9)
                assert z > 0

    def test_prior_normals_unit(self):
        scene = generate_synthetic_scene(
            SceneSpec(shape="box", views=3, image_size=(24, 24),
                      n_track_points=5), seed=3)
        d = scene.priors.depths[0]
        n = scene.priors.normals[0]
        lens = np.linalg.norm(n[d > 0], axis=1)
        np.testing.assert_allclose(lens, 1.0, atol=1e-9)

    def test_two_tone_gains_applied(self):
        scene = generate_synthetic_scene(
            SceneSpec(shape="two_tone_quad", views=4, image_size=(32, 32),
                      gains=(0.8, 1.2), n_track_points=5), seed=4)
        np.testing.assert_allclose(scene.view_gains, [0.8, 1.2, 0.8, 1.2])
        # Same surface, different exposures: mean intensities differ.
        m0 = scene.frames[0].image[scene.frames[0].depth > 0].mean()
        m1 = scene.frames[1].image[scene.frames[1].depth > 0].mean()
        assert m1 > m0 * 1.2


class TestNoise:
    def test_zero_noise_filter_keeps_everything(self):
        scene = generate_synthetic_scene(
            SceneSpec(shape="quad", views=6, image_size=(32, 32),
                      focal_multiplier=2.0, camera_distance=2.2,
                      quad_size=(2.2, 2.2), ring_radius=0.01,
                      n_track_points=5), seed=5)
        out = filter_scene(scene.frames,
                           FilterConfig(num_neighbors=5))
        for f, gt in zip(out, scene.gt_depths):
            kept = (f.depth > 0) & (gt > 0)
            assert kept.sum() / (gt > 0).sum() > 0.99

    def test_outlier_fraction_respected(self):
        noise = SceneNoise(outlier_fraction=0.2, outlier_pattern="region")
        scene = generate_synthetic_scene(
            SceneSpec(shape="quad", views=4, image_size=(64, 64),
                      focal_multiplier=2.0, camera_distance=2.2,
                      quad_size=(2.2, 2.2), ring_radius=0.01,
                      n_track_points=5), noise, seed=6)
        frac = np.mean([m.mean() for m in scene.outlier_masks])
        assert 0.15 < frac < 0.25

    def test_iid_outliers(self):
        noise = SceneNoise(outlier_fraction=0.1, outlier_pattern="iid")
        scene = generate_synthetic_scene(
            SceneSpec(shape="sphere", views=3, image_size=(48, 48),
                      n_track_points=5), noise, seed=7)
        m = scene.outlier_masks[0]
        valid = scene.gt_depths[0] > 0
        assert 0.05 < m[valid].mean() < 0.15

    def test_pose_noise_perturbs_frames_not_gt(self):
        noise = SceneNoise(pose_rot_sigma=0.02, pose_trans_sigma=0.02)
        scene = generate_synthetic_scene(
            SceneSpec(shape="sphere", views=3, image_size=(24, 24),
                      n_track_points=5), noise, seed=8)
        moved = [np.linalg.norm(f.pose.t - g.t) > 1e-6
                 for f, g in zip(scene.frames, scene.gt_poses)]
        assert all(moved)
