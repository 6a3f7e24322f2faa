"""Depth filtering tests: single-view confidence/range rules and the
multi-view reprojection-consistency vote, on exact synthetic geometry."""

import numpy as np
import pytest

from scanmesh.core import Pose, so3_exp
from scanmesh.depthfilter import (
    FilterConfig, filter_scene, multi_view_filter, select_neighbors,
    single_view_filter,
)
from scanmesh.errors import NoSources
from scanmesh.synthetic import SceneNoise, SceneSpec, generate_synthetic_scene


def plane_scene(views=12, size=128, noise=SceneNoise(), seed=0):
    spec = SceneSpec(shape="quad", views=views, image_size=(size, size),
                     focal_multiplier=1.4, camera_distance=2.2,
                     quad_size=(2.2, 2.2), ring_radius=0.04,
                     n_track_points=10)
    return generate_synthetic_scene(spec, noise, seed=seed)


class TestSingleView:
    def test_confidence_zero_masked(self):
        scene = plane_scene(views=2, size=16)
        f = scene.frames[0]
        f.confidence[3, 4] = 0
        mask = single_view_filter(f, FilterConfig())
        assert not mask[3, 4]

    def test_depth_beyond_cutoff_masked(self):
        scene = plane_scene(views=2, size=16)
        f = scene.frames[0]
        f.depth[5, 5] = 3.0
        mask = single_view_filter(f, FilterConfig())
        assert not mask[5, 5]

    def test_good_pixel_kept(self):
        scene = plane_scene(views=2, size=16)
        f = scene.frames[0]
        assert f.depth[8, 8] > 0
        mask = single_view_filter(f, FilterConfig())
        assert mask[8, 8]

    def test_invalid_depth_masked(self):
        scene = plane_scene(views=2, size=16)
        f = scene.frames[0]
        f.depth[2, 2] = 0.0
        assert not single_view_filter(f, FilterConfig())[2, 2]


class TestMultiView:
    def test_consistent_plane_kept(self):
        scene = plane_scene(views=6, size=32)
        cfg = FilterConfig(num_neighbors=5)
        ref = scene.frames[0]
        mask = multi_view_filter(ref, scene.frames[1:6], cfg)
        valid = ref.depth > 0
        assert mask[valid].mean() > 0.99

    def test_corrupted_pixel_removed(self):
        scene = plane_scene(views=11, size=32)
        cfg = FilterConfig(num_neighbors=10)
        ref = scene.frames[0]
        ref.depth[16, 16] += 0.5  # 0.5 m off against consistent sources
        mask = multi_view_filter(ref, scene.frames[1:], cfg)
        assert not mask[16, 16]

    def test_identical_pose_self_consistent(self):
        scene = plane_scene(views=2, size=24)
        ref = scene.frames[0]
        twin = scene.frames[0]
        mask = multi_view_filter(ref, [twin], FilterConfig())
        valid = ref.depth > 0
        assert mask[valid].all()

    def test_no_sources_raises(self):
        scene = plane_scene(views=2, size=16)
        with pytest.raises(NoSources):
            multi_view_filter(scene.frames[0], [], FilterConfig())

    def test_pose_equivariance(self):
        scene = plane_scene(views=5, size=24)
        cfg = FilterConfig(num_neighbors=4)
        ref_mask = multi_view_filter(scene.frames[0], scene.frames[1:], cfg)
        # Apply one global rigid transform to all frames.
        g = Pose.from_matrix(so3_exp([0.3, -0.2, 0.5]), [1.0, -2.0, 0.7])
        moved = []
        for f in scene.frames:
            import dataclasses
            moved.append(dataclasses.replace(f, pose=f.pose.compose(g.inverse())))
        moved_mask = multi_view_filter(moved[0], moved[1:], cfg)
        assert (ref_mask == moved_mask).mean() > 0.999

    def test_deterministic(self):
        scene = plane_scene(views=5, size=24)
        cfg = FilterConfig(num_neighbors=4)
        m1 = multi_view_filter(scene.frames[0], scene.frames[1:], cfg)
        m2 = multi_view_filter(scene.frames[0], scene.frames[1:], cfg)
        assert (m1 == m2).all()


class TestNeighborSelection:
    def test_nearest_by_center_distance(self):
        scene = plane_scene(views=6, size=16)
        nbrs = select_neighbors(scene.frames, 0, 3)
        c0 = scene.frames[0].pose.center()
        dists = [np.linalg.norm(f.pose.center() - c0) for f in scene.frames]
        expected = sorted(range(1, 6), key=lambda i: (dists[i], i))[:3]
        assert sorted(nbrs) == sorted(expected)


class TestFilterScene:
    def test_clean_scene_survives(self):
        scene = plane_scene(views=8, size=48)
        cfg = FilterConfig(num_neighbors=7)
        out = filter_scene(scene.frames, cfg)
        for f, gt in zip(out, scene.gt_depths):
            gt_valid = gt > 0
            kept = (f.depth > 0) & gt_valid
            assert kept.sum() / gt_valid.sum() >= 0.99

    def test_outliers_removed(self):
        noise = SceneNoise(outlier_fraction=0.2, outlier_range=(0.5, 2.0),
                           outlier_pattern="region")
        scene = plane_scene(views=12, size=128, noise=noise, seed=3)
        cfg = FilterConfig()
        out = filter_scene(scene.frames, cfg)
        removed, total = 0, 0
        for f, omask in zip(out, scene.outlier_masks):
            total += omask.sum()
            removed += (omask & (f.depth == 0)).sum()
        assert total > 0
        assert removed / total >= 0.95

    def test_never_creates_depth(self):
        noise = SceneNoise(outlier_fraction=0.1, outlier_pattern="iid")
        scene = plane_scene(views=6, size=32, noise=noise, seed=1)
        out = filter_scene(scene.frames, FilterConfig(num_neighbors=5))
        for before, after in zip(scene.frames, out):
            assert not np.any((after.depth > 0) & (before.depth == 0))

    def test_zero_passes_identity(self):
        scene = plane_scene(views=3, size=16)
        out = filter_scene(scene.frames, FilterConfig(num_passes=0,
                                                      num_neighbors=2))
        for a, b in zip(scene.frames, out):
            np.testing.assert_array_equal(a.depth, b.depth)

    def test_masks_monotone_over_passes(self):
        noise = SceneNoise(outlier_fraction=0.15, outlier_pattern="region")
        scene = plane_scene(views=6, size=32, noise=noise, seed=2)
        one = filter_scene(scene.frames,
                           FilterConfig(num_passes=1, num_neighbors=5))
        two = filter_scene(scene.frames,
                           FilterConfig(num_passes=2, num_neighbors=5))
        for f1, f2 in zip(one, two):
            assert not np.any((f2.depth > 0) & (f1.depth == 0))
