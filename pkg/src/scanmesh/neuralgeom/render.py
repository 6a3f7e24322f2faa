"""SDF volume rendering: logistic opacity, transmittance compositing, and
the exact reverse pass used for training.

Opacity follows the discrete SDF-to-alpha construction with a logistic CDF
of trainable slope s: alpha_i = max((Phi(f_i) - Phi(f_{i+1})) / Phi(f_i), 0),
computed in log space for stability.  Colors are evaluated at the first
sample of each interval; the rendered color composites over a constant
background: C = sum_i T_i a_i c_i + (1 - sum T_i a_i) * bg.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import FieldBase


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 64
    s_init: float = 20.0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    near: float | None = None   # None: per-ray bounding-box intersection
    far: float | None = None

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples per ray")
        if self.s_init <= 0:
            raise ValueError("s must be positive")


def ray_box_intersect(origins, dirs, lo, hi):
    """Slab test; returns (t_near, t_far, hit) with t_near >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (lo - origins) * inv
    t2 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    tmin = np.maximum(tmin, 0.0)
    hit = tmax > tmin + 1e-12
    return tmin, tmax, hit


def sdf_alpha(f0, f1, s):
    """Discrete opacity from consecutive SDF samples.

    Returns (alpha, ctx) where ctx carries the partials needed by
    sdf_alpha_backward.  alpha is 0 wherever the SDF is non-decreasing.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    f1 = np.asarray(f1, dtype=np.float64)
    # log Phi(x) = -softplus(-s x); D = log Phi(f1) - log Phi(f0)
    D = np.logaddexp(0.0, -s * f0) - np.logaddexp(0.0, -s * f1)
    active = D < 0
    expD = np.exp(np.minimum(D, 0.0))
    alpha = np.where(active, 1.0 - expD, 0.0)
    sig0 = 1.0 / (1.0 + np.exp(np.minimum(s * f0, 500.0)))   # sigmoid(-s f0)
    sig1 = 1.0 / (1.0 + np.exp(np.minimum(s * f1, 500.0)))
    ctx = (expD, sig0, sig1, f0, f1, s, active)
    return alpha, ctx


def sdf_alpha_backward(ctx, dalpha):
    """Partials of alpha w.r.t. (f0, f1, s) contracted with upstream."""
    expD, sig0, sig1, f0, f1, s, active = ctx
    da = np.where(active, dalpha, 0.0)
    common = -expD * da
    df0 = common * (-s * sig0)
    df1 = common * (s * sig1)
    ds = np.sum(common * (f1 * sig1 - f0 * sig0))
    return df0, df1, ds


@dataclass
class RenderResult:
    colors: np.ndarray          # (B, 3)
    opacity: np.ndarray         # (B,)
    depth: np.ndarray           # (B,)
    hit: np.ndarray             # (B,) bool
    # Saved tensors for the reverse pass (hit rays only):
    t: np.ndarray | None = None
    pts: np.ndarray | None = None
    f: np.ndarray | None = None
    sdf_grad: np.ndarray | None = None
    alpha: np.ndarray | None = None
    trans: np.ndarray | None = None
    weights: np.ndarray | None = None
    c: np.ndarray | None = None
    alpha_ctx: tuple | None = None
    sdf_ctx: object = None
    color_ctx: object = None
    background: np.ndarray | None = None


def _composite(alpha, c, t, bg):
    T = np.cumprod(1.0 - alpha, axis=1)
    T = np.concatenate([np.ones((len(alpha), 1)), T[:, :-1]], axis=1)
    w = T * alpha
    opacity = w.sum(axis=1)
    colors = np.einsum("bi,bic->bc", w, c) + (1.0 - opacity)[:, None] * bg
    denom = np.maximum(opacity, 1e-8)
    depth = np.where(opacity > 1e-6, np.einsum("bi,bi->b", w, t) / denom, 0.0)
    return T, w, opacity, colors, depth


def render_rays(origins, dirs, sdf: FieldBase, color: FieldBase, s: float,
                cfg: RenderConfig, jitter: np.ndarray | None = None,
                t_override=None, hit_override=None,
                need_eikonal: bool = False) -> RenderResult:
    """Batch volume rendering.

    jitter: optional (B, n) stratified offsets in [0, 1) (default 0.5,
    deterministic midpoints).  t_override/hit_override: externally supplied
    sample positions (octree-guided sampling); rays with hit=False render
    as pure background.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    B = len(origins)
    n = cfg.n_samples
    bg = np.asarray(cfg.background, dtype=np.float64)

    if t_override is not None:
        t_all = np.asarray(t_override, dtype=np.float64)
        hit = np.asarray(hit_override, dtype=bool)
    else:
        if cfg.near is not None and cfg.far is not None:
            near = np.full(B, cfg.near)
            far = np.full(B, cfg.far)
            hit = np.full(B, True)
        else:
            near, far, hit = ray_box_intersect(origins, dirs, sdf.lo, sdf.hi)
        u = np.full((B, n), 0.5) if jitter is None else jitter
        t_all = near[:, None] + (np.arange(n) + u) / n * (far - near)[:, None]

    res = RenderResult(
        colors=np.tile(bg, (B, 1)),
        opacity=np.zeros(B),
        depth=np.zeros(B),
        hit=hit,
        background=bg,
    )
    if not hit.any():
        return res

    t = t_all[hit]
    o = origins[hit]
    d = dirs[hit]
    pts = o[:, None, :] + t[..., None] * d[:, None, :]
    Bh = len(t)

    f_flat, g_flat, sdf_ctx = sdf.forward(pts.reshape(-1, 3),
                                          need_spatial_grad=need_eikonal)
    f = f_flat.reshape(Bh, n)
    c_pts = pts[:, :-1, :].reshape(-1, 3)
    c_dirs = np.repeat(d, n - 1, axis=0) if getattr(color, "use_dirs", False) \
        else None
    c_flat, _, color_ctx = color.forward(c_pts, c_dirs)
    c = c_flat.reshape(Bh, n - 1, 3)

    alpha, alpha_ctx = sdf_alpha(f[:, :-1], f[:, 1:], s)
    T, w, opacity, colors, depth = _composite(alpha, c, t[:, :-1], bg)

    res.colors[hit] = colors
    res.opacity[hit] = opacity
    res.depth[hit] = depth
    res.t = t
    res.pts = pts
    res.f = f
    res.sdf_grad = (g_flat.reshape(Bh, n, 1, 3) if need_eikonal else None)
    res.alpha = alpha
    res.trans = T
    res.weights = w
    res.c = c
    res.alpha_ctx = alpha_ctx
    res.sdf_ctx = sdf_ctx
    res.color_ctx = color_ctx
    return res


def render_backward(res: RenderResult, dcolors, dopacity=None):
    """Reverse pass from upstream color/opacity gradients.

    Returns (df, dc, ds): gradients w.r.t. the SDF samples (Bh, n), the
    color samples (Bh, n-1, 3), and the logistic slope s.  Combine df with
    any spatial-gradient upstream (Eikonal) before calling the field
    backward with res.sdf_ctx / res.color_ctx.
    """
    hit = res.hit
    dC = np.asarray(dcolors, dtype=np.float64).reshape(-1, 3)[hit]
    alpha, T, w, c = res.alpha, res.trans, res.weights, res.c
    bg = res.background
    u = np.einsum("bc,bic->bi", dC, c - bg[None, None, :])
    if dopacity is not None:
        u = u + np.asarray(dopacity, dtype=np.float64)[hit][:, None]
    dc = w[:, :, None] * dC[:, None, :]
    uw = u * w
    # S_k = sum_{i > k} u_i w_i  (reverse exclusive cumsum)
    S = np.cumsum(uw[:, ::-1], axis=1)[:, ::-1]
    S = np.concatenate([S[:, 1:], np.zeros((len(S), 1))], axis=1)
    dalpha = u * T - S / np.maximum(1.0 - alpha, 1e-12)
    df0, df1, ds = sdf_alpha_backward(res.alpha_ctx, dalpha)
    df = np.zeros_like(res.f)
    df[:, :-1] += df0
    df[:, 1:] += df1
    return df, dc, ds


def render_ray(ray, sdf: FieldBase, color: FieldBase, cfg: RenderConfig,
               s: float | None = None):
    """Single-ray convenience wrapper: returns (color, opacity, depth)."""
    s_val = cfg.s_init if s is None else s
    res = render_rays(ray.origin[None], ray.direction[None], sdf, color,
                      s_val, cfg)
    return res.colors[0], float(res.opacity[0]), float(res.depth[0])
