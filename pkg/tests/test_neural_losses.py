"""Field-training loss tests with hand-computed values and FD gradients."""

import numpy as np
import pytest

from scanmesh.neuralgeom.fields import GridField
from scanmesh.neuralgeom.losses import loss_color, loss_eikonal, loss_reg

LO = np.array([-1.0, -1.0, -1.0])
HI = np.array([1.0, 1.0, 1.0])


class TestLossColor:
    def test_exact_match_zero(self):
        x = np.random.default_rng(0).uniform(0, 1, (10, 3))
        v, _ = loss_color(x, x)
        assert v == 0.0

    def test_hand_sum(self):
        v, _ = loss_color(np.ones((1, 3)), np.zeros((1, 3)))
        assert v == 3.0

    def test_batch_concatenation_linear(self):
        rng = np.random.default_rng(1)
        a_r, a_t = rng.uniform(0, 1, (5, 3)), rng.uniform(0, 1, (5, 3))
        b_r, b_t = rng.uniform(0, 1, (7, 3)), rng.uniform(0, 1, (7, 3))
        va, _ = loss_color(a_r, a_t)
        vb, _ = loss_color(b_r, b_t)
        vab, _ = loss_color(np.vstack([a_r, b_r]), np.vstack([a_t, b_t]))
        assert vab == pytest.approx(va + vb, rel=1e-12)

    def test_gradient_sign(self):
        r = np.array([[0.7, 0.2, 0.5]])
        t = np.array([[0.5, 0.4, 0.5]])
        _, g = loss_color(r, t)
        np.testing.assert_array_equal(g, [[1.0, -1.0, 0.0]])


class TestLossEikonal:
    def test_unit_gradient_zero(self):
        g = np.tile([0.0, 0.0, 1.0], (20, 1))
        v, _ = loss_eikonal(g)
        assert v == pytest.approx(0.0, abs=1e-12)

    def test_double_slope_one_per_point(self):
        g = np.tile([0.0, 0.0, 2.0], (5, 1))  # f = 2z
        v, _ = loss_eikonal(g)
        assert v == pytest.approx(5.0)

    def test_constant_field_one_per_point(self):
        v, _ = loss_eikonal(np.zeros((7, 3)))
        assert v == pytest.approx(7.0)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(2)
        g0 = rng.normal(size=(6, 3))
        _, an = loss_eikonal(g0)
        h = 1e-6
        fd = np.zeros_like(g0)
        for i in range(g0.shape[0]):
            for j in range(3):
                gp, gm = g0.copy(), g0.copy()
                gp[i, j] += h
                gm[i, j] -= h
                fd[i, j] = (loss_eikonal(gp)[0] - loss_eikonal(gm)[0]) / (2 * h)
        np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-8)


class TestLossReg:
    def test_consistent_sphere_zero(self):
        rng = np.random.default_rng(3)
        n = rng.normal(size=(10, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        v, _, _ = loss_reg(np.zeros(10), n, n, w_d=1e-5, w_n=1e-3)
        assert v == pytest.approx(0.0, abs=1e-9)

    def test_opposite_normal_two_wn_per_pixel(self):
        n = np.tile([0.0, 0.0, 1.0], (4, 1))
        v, _, _ = loss_reg(np.zeros(4), n, -n, w_d=1e-5, w_n=1e-3)
        assert v == pytest.approx(4 * 2 * 1e-3)

    def test_defaults_documented(self):
        from scanmesh.neuralgeom.train import StageConfig
        cfg = StageConfig()
        assert cfg.w_d == 1e-5
        assert cfg.w_n == 1e-3

    def test_gradient_matches_fd_through_field(self):
        rng = np.random.default_rng(4)
        f = GridField(4, LO, HI)
        f.set_params(rng.normal(size=f.n_params))
        pts = rng.uniform(-0.7, 0.7, size=(8, 3))
        N = rng.normal(size=(8, 3))
        N /= np.linalg.norm(N, axis=1, keepdims=True)
        w_d, w_n = 0.3, 0.7

        def total():
            v, g = f.value_and_grad(pts)
            return loss_reg(v[:, 0], g[:, 0], N, w_d, w_n)[0]

        v, g, ctx = f.forward(pts, need_spatial_grad=True)
        _, dv, dg = loss_reg(v[:, 0], g[:, 0], N, w_d, w_n)
        an = f.backward(ctx, dv.reshape(-1, 1), dg.reshape(-1, 1, 3))
        h = 1e-6
        p0 = f.get_params()
        fd = np.zeros_like(p0)
        for k in range(len(p0)):
            p = p0.copy()
            p[k] = p0[k] + h
            f.set_params(p)
            lp = total()
            p[k] = p0[k] - h
            f.set_params(p)
            lm = total()
            fd[k] = (lp - lm) / (2 * h)
        f.set_params(p0)
        rel = np.abs(an - fd) / np.maximum(np.abs(fd), 1e-4)
        assert rel.max() < 1e-3


class TestEikonalAnalytic:
    def test_analytic_sdfs_near_zero(self):
        # Exact distance fields have unit gradients away from their medial
        # edges: sphere, plane, and box interior.
        rng = np.random.default_rng(5)
        pts = rng.uniform(-0.8, 0.8, size=(200, 3))

        sphere_g = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        v, _ = loss_eikonal(sphere_g)
        assert v / len(pts) < 1e-10

        plane_g = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
        v, _ = loss_eikonal(plane_g)
        assert v < 1e-12

        # Box interior: distance to nearest face, gradient = +-axis of the
        # closest face (sample away from diagonal edges).
        half = np.array([0.6, 0.7, 0.8])
        inner = rng.uniform(-0.3, 0.3, size=(200, 3)) * half
        gaps = half - np.abs(inner)
        axis = np.argmin(gaps, axis=1)
        g = np.zeros_like(inner)
        g[np.arange(len(inner)), axis] = np.sign(inner[np.arange(len(inner)),
                                                       axis])
        keep = np.abs(np.diff(np.sort(gaps, axis=1), axis=1)[:, 0]) > 1e-3
        v, _ = loss_eikonal(g[keep])
        assert v < 1e-12
