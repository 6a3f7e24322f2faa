"""Trainable scalar/vector fields over an axis-aligned box.

Two backends share one interface:

* ``GridField``: dense trilinear grid; values, spatial gradients, and
  parameter gradients are all exact piecewise-polynomial expressions.
* ``MlpField``: small MLP with sinusoidal positional encoding.  Spatial
  gradients are computed with forward-mode tangents and parameter gradients
  by reverse mode over both the primal and tangent passes, so losses that
  depend on the spatial gradient (Eikonal, normal alignment) differentiate
  correctly through second-order terms.

``forward`` returns a context object consumed by ``backward``; gradient
accumulation is plain array arithmetic and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FieldBase:
    out_dim: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n_params(self) -> int:
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def set_params(self, flat: np.ndarray):
        raise NotImplementedError

    def forward(self, points, dirs=None, need_spatial_grad=False):
        raise NotImplementedError

    def backward(self, ctx, dvalue, dgrad=None) -> np.ndarray:
        raise NotImplementedError

    # Convenience wrappers -------------------------------------------------
    def value(self, points, dirs=None) -> np.ndarray:
        v, _, _ = self.forward(points, dirs)
        return v

    def value_and_grad(self, points, dirs=None):
        v, g, _ = self.forward(points, dirs, need_spatial_grad=True)
        return v, g

    def domain_center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def domain_half_extent(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)


# ---------------------------------------------------------------------------
# Dense trilinear grid
# ---------------------------------------------------------------------------

class GridField(FieldBase):
    def __init__(self, resolution, lo, hi, out_dim=1, init=None):
        self.res = np.array(resolution if np.ndim(resolution) else
                            [resolution] * 3, dtype=np.int64)
        if np.any(self.res < 2):
            raise ValueError("grid needs at least 2 samples per axis")
        self.lo = np.asarray(lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(hi, dtype=np.float64).reshape(3)
        self.out_dim = out_dim
        if init is None:
            self.values = np.zeros((*self.res, out_dim))
        else:
            self.values = np.asarray(init, dtype=np.float64).reshape(
                *self.res, out_dim).copy()
        self._scale = (self.res - 1) / (self.hi - self.lo)
        Rx, Ry, Rz = self.res
        # Corner order (dx, dy, dz) lexicographic.
        self._flat_off = np.array([dx * Ry * Rz + dy * Rz + dz
                                   for dx in (0, 1) for dy in (0, 1)
                                   for dz in (0, 1)], dtype=np.int64)

    @classmethod
    def sphere_init(cls, resolution, lo, hi, radius=None, center=None,
                    out_dim=1):
        """SDF grid initialized to a centered sphere distance field."""
        g = cls(resolution, lo, hi, out_dim=out_dim)
        c = g.domain_center() if center is None else np.asarray(center)
        r = 0.8 * g.domain_half_extent().min() if radius is None else radius
        ax = [np.linspace(g.lo[i], g.hi[i], g.res[i]) for i in range(3)]
        X, Y, Z = np.meshgrid(*ax, indexing="ij")
        d = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) - r
        g.values = np.repeat(d[..., None], out_dim, axis=3)
        return g

    @property
    def n_params(self) -> int:
        return self.values.size

    def get_params(self) -> np.ndarray:
        return self.values.ravel().copy()

    def set_params(self, flat: np.ndarray):
        self.values = np.asarray(flat, dtype=np.float64).reshape(
            self.values.shape).copy()

    def forward(self, points, dirs=None, need_spatial_grad=False):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        g = (pts - self.lo) * self._scale
        inside = (g >= 0.0) & (g <= self.res - 1.0)
        np.clip(g, 0.0, self.res - 1.0, out=g)
        i0 = np.minimum(g.astype(np.int64), self.res - 2)
        f = g - i0
        Rx, Ry, Rz = self.res
        vals = self.values.reshape(-1, self.out_dim)
        base = (i0[:, 0] * Ry + i0[:, 1]) * Rz + i0[:, 2]
        idx = base[:, None] + self._flat_off[None, :]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        gx, gy, gz = 1 - fx, 1 - fy, 1 - fz
        a, b, c, d = gx * gy, gx * fy, fx * gy, fx * fy
        # Corner order (dx, dy, dz) lexicographic: 000,001,010,011,100,...
        w = np.stack([a * gz, a * fz, b * gz, b * fz,
                      c * gz, c * fz, d * gz, d * fz], axis=1)
        corner_vals = vals[idx]                       # (N, 8, C)
        if self.out_dim == 1:
            cv = corner_vals[:, :, 0]
            v = np.einsum("nk,nk->n", w, cv)[:, None]
        else:
            v = np.einsum("nk,nkc->nc", w, corner_vals)
        grad = None
        dw = None
        if need_spatial_grad:
            p0, p1, p2, p3 = gy * gz, gy * fz, fy * gz, fy * fz
            q0, q1, q2, q3 = gx * gz, gx * fz, fx * gz, fx * fz
            sc = self._scale * inside
            dwx = np.stack([-p0, -p1, -p2, -p3, p0, p1, p2, p3],
                           axis=1) * sc[:, None, 0]
            dwy = np.stack([-q0, -q1, q0, q1, -q2, -q3, q2, q3],
                           axis=1) * sc[:, None, 1]
            dwz = np.stack([-a, a, -b, b, -c, c, -d, d],
                           axis=1) * sc[:, None, 2]
            dw = (dwx, dwy, dwz)
            if self.out_dim == 1:
                grad = np.stack([np.einsum("nk,nk->n", dwx, cv),
                                 np.einsum("nk,nk->n", dwy, cv),
                                 np.einsum("nk,nk->n", dwz, cv)],
                                axis=1)[:, None, :]
            else:
                grad = np.stack(
                    [np.einsum("nk,nkc->nc", dwa, corner_vals)
                     for dwa in dw], axis=2)
        ctx = (idx, w, dw)
        return v, grad, ctx

    def backward(self, ctx, dvalue, dgrad=None) -> np.ndarray:
        idx, w, dw = ctx
        dvalue = np.asarray(dvalue, dtype=np.float64).reshape(len(w), self.out_dim)
        if dgrad is not None and dw is None:
            raise ValueError("backward with dgrad requires a forward pass "
                             "with need_spatial_grad=True")
        flat_idx = idx.ravel()
        n_cells = self.values.size // self.out_dim
        if self.out_dim == 1:
            contrib = w * dvalue
            if dgrad is not None:
                dg = np.asarray(dgrad, dtype=np.float64).reshape(len(w), 3)
                contrib = contrib + (dw[0] * dg[:, 0:1] + dw[1] * dg[:, 1:2]
                                     + dw[2] * dg[:, 2:3])
            return np.bincount(flat_idx, weights=contrib.ravel(),
                               minlength=n_cells)
        contrib = w[:, :, None] * dvalue[:, None, :]      # (N, 8, C)
        if dgrad is not None:
            dg = np.asarray(dgrad, dtype=np.float64).reshape(
                len(w), self.out_dim, 3)
            for ai, dwa in enumerate(dw):
                contrib = contrib + dwa[:, :, None] * dg[:, None, :, ai]
        cols = [np.bincount(flat_idx, weights=contrib[:, :, ci].ravel(),
                            minlength=n_cells) for ci in range(self.out_dim)]
        return np.stack(cols, axis=1).ravel()


# ---------------------------------------------------------------------------
# MLP with positional encoding
# ---------------------------------------------------------------------------

def _softplus(z, beta):
    return np.logaddexp(0.0, beta * z) / beta


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class _MlpCtx:
    enc: np.ndarray
    enc_tan: np.ndarray | None
    zs: list
    hs: list
    tans: list
    pre_tans: list
    out_z: np.ndarray
    out_tan_pre: np.ndarray | None


class MlpField(FieldBase):
    """MLP over encoded position (and optionally view direction).

    Activation is softplus; the output is linear for SDF heads and sigmoid
    for color heads.  Positions are normalized to [-1, 1] over the domain
    before encoding.
    """

    def __init__(self, lo, hi, out_dim=1, hidden=64, layers=4,
                 pos_bands=6, dir_bands=4, use_dirs=False,
                 sigmoid_output=False, beta=100.0, seed=0,
                 geometric_init=False, sphere_radius=0.5):
        self.lo = np.asarray(lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(hi, dtype=np.float64).reshape(3)
        self.out_dim = out_dim
        self.hidden = hidden
        self.n_layers = layers
        self.pos_bands = pos_bands
        self.dir_bands = dir_bands
        self.use_dirs = use_dirs
        self.sigmoid_output = sigmoid_output
        self.beta = beta
        self.pos_dim = 3 + 6 * pos_bands
        self.dir_dim = (3 + 6 * dir_bands) if use_dirs else 0
        in_dim = self.pos_dim + self.dir_dim
        rng = np.random.default_rng(seed)
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.Ws, self.bs = [], []
        for l in range(layers):
            n_in, n_out = dims[l], dims[l + 1]
            if geometric_init and l == layers - 1:
                W = rng.normal(np.sqrt(np.pi / n_in), 1e-4, size=(n_out, n_in))
                b = np.full(n_out, -sphere_radius)
            else:
                W = rng.normal(0.0, np.sqrt(2.0 / n_out), size=(n_out, n_in))
                b = np.zeros(n_out)
                if geometric_init and l == 0:
                    W[:, 3:self.pos_dim] = 0.0  # raw xyz carries the sphere
            self.Ws.append(W)
            self.bs.append(b)

    # -- parameter vector ---------------------------------------------------
    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.Ws, self.bs))

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b])
                               for W, b in zip(self.Ws, self.bs)])

    def set_params(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        k = 0
        for l in range(self.n_layers):
            s = self.Ws[l].size
            self.Ws[l] = flat[k:k + s].reshape(self.Ws[l].shape).copy()
            k += s
            s = self.bs[l].size
            self.bs[l] = flat[k:k + s].copy()
            k += s

    # -- encoding -----------------------------------------------------------
    def _encode_pos(self, pts, need_tan):
        half = self.domain_half_extent()
        xn = (pts - self.domain_center()) / half
        feats = [xn]
        tans = [np.tile(np.eye(3) / half, (len(pts), 1, 1))] if need_tan else None
        for b in range(self.pos_bands):
            w = (2.0 ** b) * np.pi
            feats.append(np.sin(w * xn))
            feats.append(np.cos(w * xn))
            if need_tan:
                dsin = (w * np.cos(w * xn))[:, :, None] * tans[0]
                dcos = (-w * np.sin(w * xn))[:, :, None] * tans[0]
                tans.append(dsin)
                tans.append(dcos)
        enc = np.concatenate(feats, axis=1)
        tan = np.concatenate(tans, axis=1) if need_tan else None
        return enc, tan

    def _encode_dirs(self, dirs):
        feats = [dirs]
        for b in range(self.dir_bands):
            w = (2.0 ** b) * np.pi
            feats.append(np.sin(w * dirs))
            feats.append(np.cos(w * dirs))
        return np.concatenate(feats, axis=1)

    # -- forward ------------------------------------------------------------
    def forward(self, points, dirs=None, need_spatial_grad=False):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        enc, enc_tan = self._encode_pos(pts, need_spatial_grad)
        if self.use_dirs:
            if dirs is None:
                raise ValueError("field was built with use_dirs=True")
            d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
            enc = np.concatenate([enc, self._encode_dirs(d)], axis=1)
            if need_spatial_grad:
                pad = np.zeros((len(pts), self.dir_dim, 3))
                enc_tan = np.concatenate([enc_tan, pad], axis=1)
        h = enc
        T = enc_tan
        zs, hs, tans, pre_tans = [], [h], [T], []
        for l in range(self.n_layers - 1):
            z = h @ self.Ws[l].T + self.bs[l]
            zs.append(z)
            h = _softplus(z, self.beta)
            hs.append(h)
            if need_spatial_grad:
                A = np.einsum("nio,ji->njo", T, self.Ws[l])
                pre_tans.append(A)
                T = _sigmoid(self.beta * z)[:, :, None] * A
                tans.append(T)
        out_z = h @ self.Ws[-1].T + self.bs[-1]
        out_tan_pre = None
        grad = None
        if need_spatial_grad:
            out_tan_pre = np.einsum("nio,ji->njo", T, self.Ws[-1])
            grad = out_tan_pre
        if self.sigmoid_output:
            v = _sigmoid(out_z)
            if need_spatial_grad:
                grad = (v * (1 - v))[:, :, None] * out_tan_pre
        else:
            v = out_z
        ctx = _MlpCtx(enc=enc, enc_tan=enc_tan, zs=zs, hs=hs, tans=tans,
                      pre_tans=pre_tans, out_z=out_z, out_tan_pre=out_tan_pre)
        return v, grad, ctx

    # -- backward -----------------------------------------------------------
    def backward(self, ctx, dvalue, dgrad=None) -> np.ndarray:
        need_tan = dgrad is not None
        if need_tan and ctx.out_tan_pre is None:
            raise ValueError("backward with dgrad requires a forward pass "
                             "with need_spatial_grad=True")
        dout = np.asarray(dvalue, dtype=np.float64).reshape(-1, self.out_dim)
        dW = [np.zeros_like(W) for W in self.Ws]
        db = [np.zeros_like(b) for b in self.bs]

        if self.sigmoid_output:
            s = _sigmoid(ctx.out_z)
            dz = s * (1 - s) * dout
            if need_tan:
                dG = np.asarray(dgrad, dtype=np.float64).reshape(
                    -1, self.out_dim, 3)
                dA = (s * (1 - s))[:, :, None] * dG
                # out_z also feeds the tangent scale s(1-s).
                dz = dz + (1 - 2 * s) * s * (1 - s) * np.einsum(
                    "nco,nco->nc", ctx.out_tan_pre, dG)
            else:
                dA = None
        else:
            dz = dout
            dA = (np.asarray(dgrad, dtype=np.float64)
                  .reshape(-1, self.out_dim, 3) if need_tan else None)

        h_prev = ctx.hs[-1]
        dW[-1] += dz.T @ h_prev
        db[-1] += dz.sum(axis=0)
        dh = dz @ self.Ws[-1]
        if need_tan:
            T_prev = ctx.tans[-1]
            dW[-1] += np.einsum("nco,nio->ci", dA, T_prev)
            dT = np.einsum("nco,ci->nio", dA, self.Ws[-1])
        else:
            dT = None

        for l in range(self.n_layers - 2, -1, -1):
            z = ctx.zs[l]
            sig = _sigmoid(self.beta * z)
            dz = sig * dh
            if need_tan:
                A = ctx.pre_tans[l]
                dsig = self.beta * sig * (1 - sig)
                dz = dz + dsig * np.einsum("njo,njo->nj", A, dT)
                dA = sig[:, :, None] * dT
            h_prev = ctx.hs[l]
            dW[l] += dz.T @ h_prev
            db[l] += dz.sum(axis=0)
            dh = dz @ self.Ws[l]
            if need_tan:
                T_prev = ctx.tans[l]
                dW[l] += np.einsum("njo,nio->ji", dA, T_prev)
                dT = np.einsum("njo,ji->nio", dA, self.Ws[l])
        return np.concatenate([np.concatenate([w.ravel(), b])
                               for w, b in zip(dW, db)])


# ---------------------------------------------------------------------------
# Analytic fields for tests and oracles
# ---------------------------------------------------------------------------

class AnalyticSDF(FieldBase):
    """Wraps closed-form fields; carries no trainable parameters."""

    def __init__(self, fn, lo, hi, grad_fn=None, out_dim=1):
        self.fn = fn
        self.grad_fn = grad_fn
        self.lo = np.asarray(lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(hi, dtype=np.float64).reshape(3)
        self.out_dim = out_dim

    @property
    def n_params(self) -> int:
        return 0

    def get_params(self) -> np.ndarray:
        return np.zeros(0)

    def set_params(self, flat):
        pass

    def forward(self, points, dirs=None, need_spatial_grad=False):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        v = np.asarray(self.fn(pts), dtype=np.float64).reshape(
            len(pts), self.out_dim)
        grad = None
        if need_spatial_grad:
            if self.grad_fn is not None:
                grad = np.asarray(self.grad_fn(pts)).reshape(
                    len(pts), self.out_dim, 3)
            else:
                h = 1e-5
                grad = np.empty((len(pts), self.out_dim, 3))
                for a in range(3):
                    dp = np.zeros(3)
                    dp[a] = h
                    fp = np.asarray(self.fn(pts + dp)).reshape(len(pts), -1)
                    fm = np.asarray(self.fn(pts - dp)).reshape(len(pts), -1)
                    grad[:, :, a] = (fp - fm) / (2 * h)
        return v, grad, None

    def backward(self, ctx, dvalue, dgrad=None) -> np.ndarray:
        return np.zeros(0)


def sphere_sdf(center=(0.0, 0.0, 0.0), radius=0.5):
    c = np.asarray(center, dtype=np.float64)

    def fn(pts):
        return np.linalg.norm(pts - c, axis=-1) - radius

    def grad_fn(pts):
        d = pts - c
        n = d / np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)
        return n[:, None, :]

    return fn, grad_fn
