"""Two-stage field training.

Stage 1 renders stratified samples over the full domain and applies the
color loss, the Eikonal regularizer, and the geometric prior term (prior
surface points and normals).  Stage 2 restricts ray samples to the sparse
voxels around the stage-1 surface and drops the prior term.

The per-iteration objective uses per-sample means of the loss sums so term
balance is independent of batch size; the recorded history is a list of
(total, color, eikonal, prior) tuples.  Everything is driven by one seeded
generator, and the prior term consumes no randomness, so runs are bitwise
reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Frame
from ..errors import DivergenceDetected
from .fields import FieldBase
from .losses import loss_color, loss_eikonal, loss_reg
from .octree import SparseVoxelOctree
from .priors import PriorMaps
from .render import RenderConfig, render_backward, render_rays


@dataclass(frozen=True)
class StageConfig:
    w_d: float = 1e-5
    w_n: float = 1e-3
    stage1_iters: int = 2000
    stage2_iters: int = 4000
    rays_per_batch: int = 512
    learning_rate: float = 5e-4
    octree_depth: int = 6
    dilation: int = 1

    def __post_init__(self):
        if self.w_d < 0 or self.w_n < 0:
            raise ValueError("weights must be >= 0")
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be >= 0")


class Adam:
    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads ** 2
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainState:
    sdf: FieldBase
    color: FieldBase
    log_s: float
    history: list = field(default_factory=list)

    @property
    def s(self) -> float:
        return float(np.exp(self.log_s))


class _FrameBank:
    """Flat per-frame arrays for vectorized pixel sampling."""

    def __init__(self, frames: list[Frame]):
        self.frames = frames
        self.images = [np.asarray(f.image, dtype=np.float64) for f in frames]
        self.Rs = np.stack([f.pose.R for f in frames])
        self.centers = np.stack([f.pose.center() for f in frames])
        self.fx = np.array([f.intrinsics.fx for f in frames])
        self.fy = np.array([f.intrinsics.fy for f in frames])
        self.cx = np.array([f.intrinsics.cx for f in frames])
        self.cy = np.array([f.intrinsics.cy for f in frames])
        self.W = frames[0].intrinsics.width
        self.H = frames[0].intrinsics.height
        self.n = len(frames)

    def sample_pixels(self, rng: np.random.Generator, k: int):
        idx = rng.integers(0, self.n * self.H * self.W, size=k)
        fi, rem = np.divmod(idx, self.H * self.W)
        v, u = np.divmod(rem, self.W)
        return fi, u, v

    def rays(self, fi, u, v):
        d_cam = np.stack([(u - self.cx[fi]) / self.fx[fi],
                          (v - self.cy[fi]) / self.fy[fi],
                          np.ones(len(u))], axis=1)
        d_world = np.einsum("bi,bij->bj", d_cam, self.Rs[fi])
        d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
        return self.centers[fi].copy(), d_world

    def targets(self, fi, u, v):
        out = np.empty((len(fi), 3))
        for i in np.unique(fi):
            sel = fi == i
            out[sel] = self.images[i][v[sel], u[sel]]
        return out


def _cam_to_world(bank: _FrameBank, fi, pc):
    # x_world = R^T (x_cam - t) = R^T x_cam + center
    return np.einsum("bij,bi->bj", bank.Rs[fi], pc) + bank.centers[fi]


def _train_loop(frames, priors: PriorMaps | None, state: TrainState,
                cfg: StageConfig, render_cfg: RenderConfig, iters: int,
                seed: int, octree: SparseVoxelOctree | None,
                use_prior: bool) -> TrainState:
    bank = _FrameBank(frames)
    rng = np.random.default_rng(seed)
    n_sdf = state.sdf.n_params
    n_color = state.color.n_params
    opt = Adam(n_sdf + n_color + 1, cfg.learning_rate)
    K = cfg.rays_per_batch
    n = render_cfg.n_samples
    prior_active = (use_prior and priors is not None
                    and (cfg.w_d > 0 or cfg.w_n > 0))

    for _ in range(iters):
        fi, u, v = bank.sample_pixels(rng, K)
        targets = bank.targets(fi, u, v)
        origins, dirs = bank.rays(fi, u, v)
        jitter = rng.random((K, n))
        if octree is not None:
            t, hit = octree.sample_rays(origins, dirs, n, jitter)
            res = render_rays(origins, dirs, state.sdf, state.color, state.s,
                              render_cfg, t_override=t, hit_override=hit,
                              need_eikonal=True)
        else:
            res = render_rays(origins, dirs, state.sdf, state.color, state.s,
                              render_cfg, jitter=jitter, need_eikonal=True)

        lc_sum, dC = loss_color(res.colors, targets)
        lc = lc_sum / K
        dC = dC / K

        if res.hit.any():
            n_pts = res.f.size
            leik_sum, dgrad_pts = loss_eikonal(res.sdf_grad)
            leik = leik_sum / n_pts
            dgrad_pts = dgrad_pts.reshape(res.sdf_grad.shape) / n_pts
            df, dc, ds = render_backward(res, dC)
            sdf_grads = state.sdf.backward(
                res.sdf_ctx, df.reshape(-1, 1), dgrad_pts.reshape(-1, 1, 3))
            color_grads = state.color.backward(res.color_ctx,
                                               dc.reshape(-1, 3))
        else:
            leik, ds = 0.0, 0.0
            sdf_grads = np.zeros(n_sdf)
            color_grads = np.zeros(n_color)

        lreg = 0.0
        if prior_active:
            pd = np.empty(K)
            pn = np.empty((K, 3))
            ok = np.zeros(K, dtype=bool)
            for i in np.unique(fi):
                sel = fi == i
                if priors.has(int(i)):
                    d, nn, val = priors.lookup(int(i), u[sel], v[sel])
                    pd[sel], pn[sel] = d, nn
                    ok[sel] = val
            if ok.any():
                pc = np.stack([(u[ok] - bank.cx[fi[ok]]) / bank.fx[fi[ok]] * pd[ok],
                               (v[ok] - bank.cy[fi[ok]]) / bank.fy[fi[ok]] * pd[ok],
                               pd[ok]], axis=1)
                X = _cam_to_world(bank, fi[ok], pc)
                fv, fg, ctx = state.sdf.forward(X, need_spatial_grad=True)
                lreg_sum, dvals, dgr = loss_reg(fv[:, 0], fg[:, 0], pn[ok],
                                                cfg.w_d, cfg.w_n)
                m = int(ok.sum())
                lreg = lreg_sum / m
                sdf_grads = sdf_grads + state.sdf.backward(
                    ctx, (dvals / m).reshape(-1, 1),
                    (dgr / m).reshape(-1, 1, 3))

        total = lc + leik + lreg
        if not np.isfinite(total):
            raise DivergenceDetected(f"loss became {total}")
        state.history.append((total, lc, leik, lreg))

        grads = np.concatenate([sdf_grads, color_grads,
                                [ds * state.s]])
        params = np.concatenate([state.sdf.get_params(),
                                 state.color.get_params(), [state.log_s]])
        params = opt.step(params, grads)
        state.sdf.set_params(params[:n_sdf])
        state.color.set_params(params[n_sdf:n_sdf + n_color])
        state.log_s = float(params[-1])
    return state


def train_stage1(frames: list[Frame], priors: PriorMaps | None,
                 sdf: FieldBase, color: FieldBase, cfg: StageConfig,
                 render_cfg: RenderConfig, seed: int = 0) -> TrainState:
    """First stage: full-domain sampling with prior regularization."""
    state = TrainState(sdf=sdf, color=color,
                       log_s=float(np.log(render_cfg.s_init)))
    return _train_loop(frames, priors, state, cfg, render_cfg,
                       cfg.stage1_iters, seed, octree=None, use_prior=True)


def train_stage2(frames: list[Frame], state: TrainState,
                 octree: SparseVoxelOctree, cfg: StageConfig,
                 render_cfg: RenderConfig, seed: int = 1) -> TrainState:
    """Second stage: octree-guided sampling, prior term dropped."""
    return _train_loop(frames, None, state, cfg, render_cfg,
                       cfg.stage2_iters, seed, octree=octree, use_prior=False)
