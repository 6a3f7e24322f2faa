"""Field backend tests: value / spatial-gradient / parameter-gradient
consistency, verified against central finite differences."""

import numpy as np
import pytest

from scanmesh.neuralgeom.fields import AnalyticSDF, GridField, MlpField, sphere_sdf

LO = np.array([-1.0, -1.0, -1.0])
HI = np.array([1.0, 1.0, 1.0])


def make_grid(seed=0, out_dim=1, res=5):
    rng = np.random.default_rng(seed)
    g = GridField(res, LO, HI, out_dim=out_dim)
    g.set_params(rng.normal(size=g.n_params))
    return g


def make_mlp(seed=0, out_dim=1, **kw):
    return MlpField(LO, HI, out_dim=out_dim, hidden=16, layers=3,
                    pos_bands=3, seed=seed, **kw)


def interior_points(rng, n, margin=0.15):
    """Points away from grid cell faces so spatial FD probes sit inside one
    cell (the trilinear gradient is discontinuous across faces)."""
    res = 5
    cells = rng.integers(0, res - 1, size=(n, 3))
    frac = rng.uniform(margin, 1 - margin, size=(n, 3))
    return LO + (cells + frac) * (HI - LO) / (res - 1)


def spatial_fd(field, pts, dirs=None, h=1e-5):
    g = np.empty((len(pts), field.out_dim, 3))
    for a in range(3):
        d = np.zeros(3)
        d[a] = h
        vp = field.value(pts + d, dirs)
        vm = field.value(pts - d, dirs)
        g[:, :, a] = (vp - vm) / (2 * h)
    return g


def param_fd(field, loss_fn, h=1e-5):
    p0 = field.get_params()
    g = np.empty_like(p0)
    for k in range(len(p0)):
        p = p0.copy()
        p[k] = p0[k] + h
        field.set_params(p)
        lp = loss_fn()
        p[k] = p0[k] - h
        field.set_params(p)
        lm = loss_fn()
        g[k] = (lp - lm) / (2 * h)
    field.set_params(p0)
    return g


def check_param_grad(field, with_grad_term, dirs=None, seed=0):
    """Loss = <a, values> + <B, spatial grads>; analytic vs FD."""
    rng = np.random.default_rng(seed)
    pts = interior_points(rng, 20)
    if getattr(field, "use_dirs", False):
        dirs = rng.normal(size=(len(pts), 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    a = rng.normal(size=(len(pts), field.out_dim))
    B = rng.normal(size=(len(pts), field.out_dim, 3)) if with_grad_term else None

    def loss_fn():
        v, g, _ = field.forward(pts, dirs, need_spatial_grad=with_grad_term)
        val = np.sum(a * v)
        if with_grad_term:
            val += np.sum(B * g)
        return val

    _, _, ctx = field.forward(pts, dirs, need_spatial_grad=with_grad_term)
    analytic = field.backward(ctx, a, B)
    fd = param_fd(field, loss_fn, h=1e-5)
    denom = np.maximum(np.abs(fd), 1e-4)
    rel = np.abs(analytic - fd) / denom
    assert rel.max() < 1e-3, f"max rel err {rel.max()}"


class TestGridField:
    def test_value_matches_trilinear_corners(self):
        g = make_grid()
        # At grid nodes the value equals the stored parameter.
        ax = [np.linspace(LO[i], HI[i], 5) for i in range(3)]
        pts = np.array([[ax[0][2], ax[1][3], ax[2][1]]])
        v = g.value(pts)
        assert v[0, 0] == pytest.approx(g.values[2, 3, 1, 0], abs=1e-12)

    def test_spatial_grad_matches_fd(self):
        g = make_grid(seed=1)
        rng = np.random.default_rng(2)
        pts = interior_points(rng, 30)
        _, grad = g.value_and_grad(pts)
        fd = spatial_fd(g, pts)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() < 1e-3

    def test_param_grad_value_only(self):
        check_param_grad(make_grid(seed=3), with_grad_term=False)

    def test_param_grad_with_spatial_term(self):
        check_param_grad(make_grid(seed=4), with_grad_term=True)

    def test_sphere_init_sdf(self):
        g = GridField.sphere_init(17, LO, HI, radius=0.5)
        rng = np.random.default_rng(5)
        pts = rng.uniform(-0.8, 0.8, size=(50, 3))
        v = g.value(pts)[:, 0]
        exact = np.linalg.norm(pts, axis=1) - 0.5
        assert np.abs(v - exact).max() < 0.02  # trilinear discretization

    def test_outside_points_clamped_zero_grad(self):
        g = make_grid(seed=6)
        pts = np.array([[2.0, 0.0, 0.0]])
        v, grad = g.value_and_grad(pts)
        assert np.isfinite(v).all()
        assert grad[0, 0, 0] == 0.0  # clamped axis


class TestMlpField:
    def test_spatial_grad_matches_fd(self):
        f = make_mlp(seed=1)
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.8, 0.8, size=(25, 3))
        _, grad = f.value_and_grad(pts)
        fd = spatial_fd(f, pts, h=1e-5)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() < 1e-3

    def test_param_grad_value_only(self):
        check_param_grad(make_mlp(seed=3), with_grad_term=False)

    def test_param_grad_with_spatial_term(self):
        # Exercises the second-order terms (reverse over forward tangents).
        check_param_grad(make_mlp(seed=4), with_grad_term=True)

    def test_color_head_sigmoid_with_dirs(self):
        f = make_mlp(seed=5, out_dim=3, use_dirs=True, sigmoid_output=True)
        rng = np.random.default_rng(6)
        pts = rng.uniform(-0.8, 0.8, size=(15, 3))
        dirs = rng.normal(size=(15, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        v = f.value(pts, dirs)
        assert ((v > 0) & (v < 1)).all()
        check_param_grad(f, with_grad_term=False, dirs=dirs, seed=7)

    def test_sigmoid_head_spatial_grad_param_grad(self):
        f = make_mlp(seed=8, out_dim=3, use_dirs=True, sigmoid_output=True)
        rng = np.random.default_rng(9)
        dirs = rng.normal(size=(20, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        check_param_grad(f, with_grad_term=True, dirs=dirs, seed=10)

    def test_geometric_init_close_to_sphere(self):
        f = MlpField(LO, HI, hidden=64, layers=4, pos_bands=6, seed=0,
                     geometric_init=True, sphere_radius=0.5)
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.9, 0.9, size=(200, 3))
        v = f.value(pts)[:, 0]
        ref = np.linalg.norm(pts / f.domain_half_extent(), axis=1) - 0.5
        # Sign agreement away from the implied surface is what matters.
        away = np.abs(ref) > 0.15
        assert (np.sign(v[away]) == np.sign(ref[away])).mean() > 0.9

    def test_params_round_trip(self):
        f = make_mlp(seed=11)
        p = f.get_params()
        rng = np.random.default_rng(12)
        q = rng.normal(size=p.shape)
        f.set_params(q)
        np.testing.assert_array_equal(f.get_params(), q)


class TestAnalyticSDF:
    def test_sphere_value_and_grad(self):
        fn, grad_fn = sphere_sdf(radius=0.5)
        f = AnalyticSDF(fn, LO, HI, grad_fn=grad_fn)
        pts = np.array([[0.5, 0.0, 0.0], [0.0, 0.8, 0.0]])
        v, g = f.value_and_grad(pts)
        np.testing.assert_allclose(v[:, 0], [0.0, 0.3], atol=1e-12)
        np.testing.assert_allclose(g[0, 0], [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(g[:, 0], axis=1), 1.0,
                                   atol=1e-12)
