"""Core geometry tests: projection, unprojection, poses, bilinear sampling.

Expected values are hand-computed pinhole / rigid-transform arithmetic.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scanmesh.core import (
    CameraIntrinsics, Pose, Ray, bilinear_sample, bilinear_sample_many,
    project, project_many, unproject, unproject_many, so3_exp, so3_log,
)
from scanmesh.errors import BehindCamera, NonPositiveDepth, OutOfBounds


K100 = CameraIntrinsics(fx=100, fy=100, cx=50, cy=50, width=101, height=101)


def random_pose(rng) -> Pose:
    w = rng.normal(size=3) * 0.5
    t = rng.normal(size=3)
    return Pose.from_matrix(so3_exp(w), t)


class TestProject:
    def test_principal_ray(self):
        pix, z = project(K100, Pose.identity(), [0, 0, 1])
        np.testing.assert_allclose(pix, [50, 50])
        assert z == 1.0

    def test_off_axis(self):
        # (0.5, 0, 1): u = 100*0.5/1 + 50 = 100
        pix, z = project(K100, Pose.identity(), [0.5, 0, 1])
        np.testing.assert_allclose(pix, [100, 50])
        assert z == 1.0

    def test_translated_camera(self):
        # Camera at (0, 0, -2) looking +z: world->cam t = -R C = (0, 0, 2).
        pose = Pose.identity()
        pose = Pose(pose.q, [0, 0, 2])
        _, z = project(K100, pose, [0, 0, 0])
        assert z == pytest.approx(2.0)

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCamera):
            project(K100, Pose.identity(), [0, 0, -1])

    def test_project_many_matches_scalar(self):
        rng = np.random.default_rng(0)
        pose = random_pose(rng)
        pts = rng.normal(size=(50, 3)) + [0, 0, 5]
        pix, z, valid = project_many(K100, pose, pts)
        for i in range(len(pts)):
            if valid[i]:
                p, zz = project(K100, pose, pts[i])
                np.testing.assert_allclose(pix[i], p, atol=1e-12)
                assert z[i] == pytest.approx(zz)


class TestUnproject:
    def test_principal_pixel(self):
        p = unproject(K100, Pose.identity(), [50, 50], 1.0)
        np.testing.assert_allclose(p, [0, 0, 1])

    def test_hand_case(self):
        # pixel (100, 50), fx=100, cx=50, depth 2 -> ((100-50)/100*2, 0, 2)
        p = unproject(K100, Pose.identity(), [100, 50], 2.0)
        np.testing.assert_allclose(p, [1, 0, 2])

    def test_nonpositive_depth(self):
        with pytest.raises(NonPositiveDepth):
            unproject(K100, Pose.identity(), [50, 50], 0.0)

    def test_round_trip_many(self):
        rng = np.random.default_rng(7)
        pose = random_pose(rng)
        pix = rng.uniform(0, 100, size=(1000, 2))
        depth = rng.uniform(0.1, 10, size=1000)
        pts = unproject_many(K100, pose, pix, depth)
        pix2, z2, valid = project_many(K100, pose, pts)
        assert valid.all()
        np.testing.assert_allclose(pix2, pix, atol=1e-6)
        np.testing.assert_allclose(z2, depth, atol=1e-6)


class TestPose:
    def test_inverse_composes_to_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = random_pose(rng)
            q = p.compose(p.inverse())
            np.testing.assert_allclose(q.R, np.eye(3), atol=1e-9)
            np.testing.assert_allclose(q.t, 0, atol=1e-9)

    def test_rotation_orthonormal(self):
        rng = np.random.default_rng(4)
        p = random_pose(rng)
        R = p.R
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)

    def test_composition_associative(self):
        rng = np.random.default_rng(5)
        a, b, c = (random_pose(rng) for _ in range(3))
        lhs = a.compose(b).compose(c)
        rhs = a.compose(b.compose(c))
        np.testing.assert_allclose(lhs.R, rhs.R, atol=1e-9)
        np.testing.assert_allclose(lhs.t, rhs.t, atol=1e-9)

    def test_apply_matches_matrix(self):
        rng = np.random.default_rng(6)
        p = random_pose(rng)
        x = rng.normal(size=3)
        np.testing.assert_allclose(p.apply(x), p.R @ x + p.t, atol=1e-12)
        np.testing.assert_allclose(p.apply_inverse(p.apply(x)), x, atol=1e-10)

    def test_so3_log_exp_round_trip(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            w = rng.normal(size=3)
            w = w / np.linalg.norm(w) * rng.uniform(1e-8, 3.0)
            np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-7)


class TestRay:
    def test_direction_normalized(self):
        r = Ray([0, 0, 0], [0, 0, 5])
        assert np.linalg.norm(r.direction) == pytest.approx(1.0, abs=1e-12)


class TestBilinear:
    def test_integer_coordinate_exact(self):
        g = np.arange(12, dtype=float).reshape(3, 4)
        assert bilinear_sample(g, [2, 1]) == g[1, 2]

    def test_midpoint_of_columns(self):
        # texels valued 0,1 by column: midpoint -> 0.5
        g = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert bilinear_sample(g, [0.5, 0.5]) == pytest.approx(0.5)

    def test_constant_grid(self):
        g = np.full((5, 5), 3.25)
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = rng.uniform(0, 4, size=2)
            assert bilinear_sample(g, p) == pytest.approx(3.25)

    def test_out_of_bounds_rejected(self):
        g = np.zeros((4, 4))
        with pytest.raises(OutOfBounds):
            bilinear_sample(g, [3.5, 1.0])

    def test_clamp_mode(self):
        g = np.arange(16, dtype=float).reshape(4, 4)
        assert bilinear_sample(g, [10, 10], clamp=True) == g[3, 3]

    @given(a=st.floats(-2, 2), b=st.floats(-2, 2), seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_linear_in_grid_values(self, a, b, seed):
        rng = np.random.default_rng(seed)
        g1 = rng.normal(size=(4, 5))
        g2 = rng.normal(size=(4, 5))
        p = rng.uniform([0, 0], [4, 3])
        lhs = bilinear_sample(a * g1 + b * g2, p)
        rhs = a * bilinear_sample(g1, p) + b * bilinear_sample(g2, p)
        assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_many_matches_scalar(self):
        rng = np.random.default_rng(1)
        g = rng.normal(size=(6, 7, 3))
        pts = rng.uniform([0, 0], [6, 5], size=(30, 2))
        vals, inside = bilinear_sample_many(g, pts)
        assert inside.all()
        for i, p in enumerate(pts):
            np.testing.assert_allclose(vals[i], bilinear_sample(g, p), atol=1e-12)
