"""Triangulation and bundle adjustment tests.

The scale-drift scenarios build a 20-camera / 200-point cloud with ground
truth, scale the initial guess by 1.2x, and check that depth factors pull
the reconstruction back to metric scale while pure reprojection cannot.
"""

import numpy as np
import pytest

from scanmesh.core import CameraIntrinsics, Pose, project, so3_exp
from scanmesh.errors import CheiralityViolation, DegenerateGeometry
from scanmesh.sfm import (
    BAProblem, DepthFactorConfig, ParamLayout, Track, align_similarity,
    ba_residuals, refine, robust_cost, triangulate,
)

INTR = CameraIntrinsics(fx=230, fy=230, cx=127.5, cy=127.5, width=256, height=256)


def orbit_pose(i, n, dist=3.0):
    az = 2 * np.pi * i / n
    el = 0.3 * np.sin(2.1 * i + 0.4)
    eye = dist * np.array([np.cos(el) * np.cos(az), np.sin(el),
                           np.cos(el) * np.sin(az)])
    z = -eye / np.linalg.norm(eye)
    up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose.from_matrix(R, -R @ eye)


def make_cloud_scene(n_cams=20, n_pts=200, seed=0, pixel_sigma=0.0):
    """Ground-truth poses, points, and (noisy) observations; every point is
    observed by every camera (points kept inside a small ball)."""
    rng = np.random.default_rng(seed)
    poses = [orbit_pose(i, n_cams) for i in range(n_cams)]
    pts = rng.uniform(-0.6, 0.6, size=(n_pts, 3))
    tracks = []
    for X in pts:
        obs = []
        for i, p in enumerate(poses):
            pix, z = project(INTR, p, X)
            if 0 <= pix[0] <= 255 and 0 <= pix[1] <= 255:
                if pixel_sigma > 0:
                    pix = pix + rng.normal(0, pixel_sigma, 2)
                obs.append((i, pix))
        if len(obs) >= 2:
            tracks.append(Track(point=X.copy(), observations=obs))
    return poses, tracks


def splat_depth_maps(poses, tracks):
    """Per-camera sparse depth maps holding the true z of each track point
    at its (rounded) projection."""
    maps = [np.zeros((INTR.height, INTR.width), dtype=np.float64)
            for _ in poses]
    for tr in tracks:
        for i, _ in tr.observations:
            pc = poses[i].apply(tr.point)
            u = INTR.fx * pc[0] / pc[2] + INTR.cx
            v = INTR.fy * pc[1] / pc[2] + INTR.cy
            ui, vi = int(round(u)), int(round(v))
            if 0 <= ui < INTR.width and 0 <= vi < INTR.height:
                maps[i][vi, ui] = pc[2]
    return maps


def scaled_state(poses, tracks, scale):
    """Initial guess with a global scale drift about the world origin."""
    init_poses = [Pose.from_matrix(p.R, scale * p.t) for p in poses]
    init_tracks = [Track(point=scale * t.point,
                         observations=[(i, px.copy())
                                       for i, px in t.observations])
                   for t in tracks]
    return init_poses, init_tracks


def mean_baseline(poses):
    C = np.array([p.center() for p in poses])
    d = np.linalg.norm(C[:, None] - C[None, :], axis=2)
    return d[np.triu_indices(len(poses), 1)].mean()


class TestTriangulate:
    def test_two_view_exact(self):
        X = np.array([0.3, -0.1, 2.0])
        p0 = Pose.identity()
        p1 = Pose(np.array([1.0, 0, 0, 0]), np.array([-0.5, 0.0, 0.0]))
        obs = [(p, INTR, project(INTR, p, X)[0]) for p in (p0, p1)]
        rec = triangulate(obs)
        np.testing.assert_allclose(rec, X, atol=1e-6)

    def test_zero_baseline_degenerate(self):
        X = np.array([0.0, 0.0, 2.0])
        p = Pose.identity()
        pix, _ = project(INTR, p, X)
        with pytest.raises(DegenerateGeometry):
            triangulate([(p, INTR, pix), (p, INTR, pix)])

    def test_cheirality_violation(self):
        # Fabricated observations of a point behind both cameras.
        X = np.array([0.0, 0.1, -2.0])
        p0 = Pose.identity()
        p1 = Pose(np.array([1.0, 0, 0, 0]), np.array([-0.5, 0.0, 0.0]))
        obs = []
        for p in (p0, p1):
            pc = p.apply(X)
            u = INTR.fx * pc[0] / pc[2] + INTR.cx
            v = INTR.fy * pc[1] / pc[2] + INTR.cy
            obs.append((p, INTR, np.array([u, v])))
        with pytest.raises(CheiralityViolation):
            triangulate(obs)

    def test_noisy_three_view_rmse(self):
        rng = np.random.default_rng(42)
        poses = [orbit_pose(i, 3) for i in range(3)]
        errs = []
        for _ in range(100):
            X = rng.uniform(-0.5, 0.5, 3)
            obs = []
            for p in poses:
                pix, _ = project(INTR, p, X)
                obs.append((p, INTR, pix + rng.normal(0, 0.5, 2)))
            rec = triangulate(obs)
            for p, _, pix in obs:
                rp, _ = project(INTR, p, rec)
                errs.append(np.sum((rp - pix) ** 2))
        rmse = np.sqrt(np.mean(errs))
        assert rmse < 1.0


class TestResiduals:
    def test_zero_at_ground_truth(self):
        poses, tracks = make_cloud_scene(n_cams=5, n_pts=30, seed=1)
        prob = BAProblem(poses=poses, intrinsics=[INTR] * 5, tracks=tracks,
                         depth_cfg=DepthFactorConfig(enabled=False))
        cost = robust_cost(prob, *prob.initial_state())
        assert cost < 1e-12

    def test_cauchy_hand_value(self):
        # One observation offset by (3, 4) px at Cauchy scale 1: the robust
        # cost contribution is log(1 + 25); the other observation is exact.
        X = np.array([0.0, 0.0, 2.0])
        p0 = Pose.identity()
        p1 = Pose(np.array([1.0, 0, 0, 0]), np.array([-0.4, 0.0, 0.0]))
        pix0, _ = project(INTR, p0, X)
        pix1, _ = project(INTR, p1, X)
        tr = Track(point=X, observations=[(0, pix0), (1, pix1 + [3.0, 4.0])])
        prob = BAProblem(poses=[p0, p1], intrinsics=[INTR] * 2, tracks=[tr],
                         cauchy_scale=1.0,
                         depth_cfg=DepthFactorConfig(enabled=False))
        cost = robust_cost(prob, *prob.initial_state())
        assert cost == pytest.approx(np.log(26.0), rel=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_jacobian_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        poses, tracks = make_cloud_scene(n_cams=4, n_pts=12, seed=seed,
                                         pixel_sigma=2.0)
        maps = splat_depth_maps(poses, tracks)
        prob = BAProblem(poses=poses, intrinsics=[INTR] * 4, tracks=tracks,
                         depth_maps=maps, depth_intrinsics=[INTR] * 4,
                         depth_cfg=DepthFactorConfig(eta=0.05, enabled=True))
        assert len(prob.depth_factors[1]) > 0
        layout = ParamLayout(prob)
        state = prob.initial_state()
        # Evaluate off the optimum so residuals are generic.
        delta0 = rng.normal(0, 1e-3, layout.n_cols)
        state = layout.retract(*state, delta0)
        r0, J = ba_residuals(prob, state)
        J = J.toarray()
        h = 1e-6
        J_fd = np.zeros_like(J)
        for k in range(layout.n_cols):
            d = np.zeros(layout.n_cols)
            d[k] = h
            rp, _ = ba_residuals(prob, layout.retract(*state, d))
            rm, _ = ba_residuals(prob, layout.retract(*state, -d))
            J_fd[:, k] = (rp - rm) / (2 * h)
        rel = np.abs(J - J_fd) / (1.0 + np.abs(J))
        assert rel.max() < 1e-4


class TestRefine:
    def test_zero_noise_converges_immediately(self):
        poses, tracks = make_cloud_scene(n_cams=5, n_pts=30, seed=3)
        prob = BAProblem(poses=poses, intrinsics=[INTR] * 5, tracks=tracks,
                         depth_cfg=DepthFactorConfig(enabled=False))
        _, _, hist = refine(prob)
        assert hist[-1] < 1e-12
        assert len(hist) <= 3  # initial cost plus at most two accepted steps

    def test_cost_monotone(self):
        poses, tracks = make_cloud_scene(n_cams=8, n_pts=60, seed=4,
                                         pixel_sigma=1.0)
        init_poses, init_tracks = scaled_state(poses, tracks, 1.05)
        prob = BAProblem(poses=init_poses, intrinsics=[INTR] * 8,
                         tracks=init_tracks,
                         depth_cfg=DepthFactorConfig(enabled=False))
        _, _, hist = refine(prob)
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_perturbed_poses_recovered(self):
        rng = np.random.default_rng(11)
        poses, tracks = make_cloud_scene(n_cams=8, n_pts=80, seed=5)
        noisy_poses = []
        for p in poses:
            w = rng.normal(size=3)
            w *= np.deg2rad(1.0) / np.linalg.norm(w)
            dt = rng.normal(0, 0.02, 3)
            noisy_poses.append(Pose.from_matrix(so3_exp(w) @ p.R, p.t + dt))
        # Points triangulated from the noisy poses.
        init_tracks = []
        for t in tracks:
            obs = [(noisy_poses[i], INTR, px) for i, px in t.observations]
            init_tracks.append(Track(point=triangulate(obs),
                                     observations=t.observations))
        prob = BAProblem(poses=noisy_poses, intrinsics=[INTR] * 8,
                         tracks=init_tracks,
                         depth_cfg=DepthFactorConfig(enabled=False))
        ref_poses, _, hist = refine(prob)
        assert hist[-1] < 1e-10
        # Align the recovered cameras to ground truth (gauge freedom).
        C_rec = np.array([p.center() for p in ref_poses])
        C_gt = np.array([p.center() for p in poses])
        s, R, t = align_similarity(C_rec, C_gt)
        for pr, pg in zip(ref_poses, poses):
            c_aligned = s * R @ pr.center() + t
            assert np.linalg.norm(c_aligned - pg.center()) < 1e-4
            R_aligned = pr.R @ R.T
            ang = np.arccos(np.clip((np.trace(R_aligned @ pg.R.T) - 1) / 2,
                                    -1, 1))
            assert ang < 1e-4

    def test_gauge_invariance_of_final_cost(self):
        poses, tracks = make_cloud_scene(n_cams=6, n_pts=40, seed=6,
                                         pixel_sigma=1.0)
        prob1 = BAProblem(poses=poses, intrinsics=[INTR] * 6, tracks=tracks,
                          depth_cfg=DepthFactorConfig(enabled=False))
        _, _, h1 = refine(prob1)
        g = Pose.from_matrix(so3_exp([0.2, -0.1, 0.3]), [0.5, 1.0, -0.2])
        poses2 = [p.compose(g.inverse()) for p in poses]
        tracks2 = [Track(point=g.apply(t.point),
                         observations=[(i, px.copy()) for i, px in t.observations])
                   for t in tracks]
        prob2 = BAProblem(poses=poses2, intrinsics=[INTR] * 6, tracks=tracks2,
                          depth_cfg=DepthFactorConfig(enabled=False))
        _, _, h2 = refine(prob2)
        assert h2[-1] == pytest.approx(h1[-1], abs=1e-8)


class TestDepthFactor:
    def run_scale_case(self, seed, enabled):
        poses, tracks = make_cloud_scene(n_cams=20, n_pts=200, seed=seed,
                                         pixel_sigma=1.0)
        maps = splat_depth_maps(poses, tracks)
        init_poses, init_tracks = scaled_state(poses, tracks, 1.2)
        prob = BAProblem(poses=init_poses, intrinsics=[INTR] * 20,
                         tracks=init_tracks,
                         depth_maps=maps if enabled else None,
                         depth_intrinsics=[INTR] * 20 if enabled else None,
                         depth_cfg=DepthFactorConfig(eta=0.05, enabled=enabled))
        ref_poses, _, _ = refine(prob)
        scale = mean_baseline(ref_poses) / mean_baseline(poses)
        return abs(scale - 1.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_depth_factor_recovers_scale(self, seed):
        err_with = self.run_scale_case(seed, enabled=True)
        err_without = self.run_scale_case(seed, enabled=False)
        assert err_with < 0.01
        assert err_with < err_without
