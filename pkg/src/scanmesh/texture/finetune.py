"""Texel optimization against the captured views.

The mesh is frozen, so each view's geometry buffers and each neighbor warp
are computed once; per epoch only the texel fetch, the photometric and
multi-view losses, and the Adam update run.  Texel values are clamped to
[0, 1] after every step and only atlas-valid texels are trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Frame
from ..errors import DivergenceDetected
from ..mesh.tri import TriangleMesh
from .losses import loss_photometric, masked_blend_loss, warp_neighbor
from .raster import TextureAtlas, rasterize_geometry, shade, shade_backward


@dataclass(frozen=True)
class FinetuneConfig:
    alpha: float = 0.85
    epochs: int = 3000
    learning_rate: float = 1e-3
    lr_decay_epochs: tuple[int, ...] = (500, 2000)
    lr_decay_factor: float = 0.1
    neighbor_count: int = 2
    multiview_weight: float = 1.0

    def __post_init__(self):
        if not (0 <= self.alpha <= 1):
            raise ValueError("alpha must be in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class FinetuneReport:
    loss_history: list          # per-epoch (total, photo, multi)
    initial_photo: float
    final_photo: float
    heldout_psnr_before: float | None = None
    heldout_psnr_after: float | None = None


def _nearest_neighbors(frames: list[Frame], i: int, k: int) -> list[int]:
    c = frames[i].pose.center()
    order = sorted((float(np.linalg.norm(f.pose.center() - c)), f.frame_id, j)
                   for j, f in enumerate(frames) if j != i)
    return [j for _, _, j in order[:k]]


def _heldout_psnr(mesh, atlas, frames) -> float:
    from ..cli.metrics import psnr
    from .raster import rasterize
    vals = []
    for f in frames:
        buf = rasterize(mesh, atlas, f.intrinsics, f.pose,
                        (f.intrinsics.width, f.intrinsics.height))
        vals.append(psnr(np.clip(buf.color, 0, 1), f.image))
    return float(np.mean(vals))


def finetune_texture(mesh: TriangleMesh, atlas: TextureAtlas,
                     frames: list[Frame], cfg: FinetuneConfig,
                     layout=None, heldout: list[Frame] | None = None
                     ) -> tuple[TextureAtlas, FinetuneReport]:
    """Optimizes atlas texels; returns (atlas, report).

    The multi-view term warps each neighbor's captured image through the
    rendered depth and compares it with the rendered image, so its
    gradient flows into the texels alongside the photometric term.  When
    the atlas layout is given, gutter texels mirror their nearest owned
    texel: their gradients are redirected there and their values re-synced
    after every step.
    """
    geoms = [rasterize_geometry(mesh, f.intrinsics, f.pose,
                                (f.intrinsics.width, f.intrinsics.height))
             for f in frames]
    mirror = None
    if layout is not None and layout.gutter_source is not None:
        mirror = layout.gutter_source.ravel()
    # Precompute warps: geometry is frozen.
    warps = []
    for i, f in enumerate(frames):
        per_frame = []
        for j in _nearest_neighbors(frames, i, cfg.neighbor_count):
            warped, valid = warp_neighbor(geoms[i].depth, f, frames[j],
                                          neighbor_depth=geoms[j].depth)
            if valid.any():
                per_frame.append((warped, valid))
        warps.append(per_frame)

    S = atlas.size
    texels = atlas.texels.copy()
    valid3 = atlas.valid[:, :, None]
    m = np.zeros_like(texels)
    v = np.zeros_like(texels)
    t_step = 0
    lr = cfg.learning_rate
    history = []
    initial_photo = None

    for epoch in range(cfg.epochs):
        if epoch in cfg.lr_decay_epochs:
            lr *= cfg.lr_decay_factor
        grad = np.zeros_like(texels)
        photo_total = 0.0
        multi_total = 0.0
        cur = TextureAtlas(texels=texels, valid=atlas.valid)
        for i, f in enumerate(frames):
            img = shade(geoms[i], cur)
            lp, dimg = loss_photometric(img, f.image, cfg.alpha)
            photo_total += lp
            for warped, wvalid in warps[i]:
                lm, dm = masked_blend_loss(img, warped, wvalid, cfg.alpha)
                multi_total += lm
                dimg = dimg + cfg.multiview_weight * dm
            grad += shade_backward(geoms[i], S, dimg)
        photo_total /= len(frames)
        multi_total /= len(frames)
        total = photo_total + cfg.multiview_weight * multi_total
        if not np.isfinite(total):
            raise DivergenceDetected(f"texture loss became {total}")
        if initial_photo is None:
            initial_photo = photo_total
        history.append((total, photo_total, multi_total))

        if mirror is not None:
            # Route gutter gradients to their owning texels.
            flat = grad.reshape(-1, 3)
            routed = np.zeros_like(flat)
            for c in range(3):
                routed[:, c] = np.bincount(mirror, weights=flat[:, c],
                                           minlength=len(flat))
            grad = routed.reshape(grad.shape)
        grad *= valid3
        t_step += 1
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad ** 2
        mh = m / (1 - 0.9 ** t_step)
        vh = v / (1 - 0.999 ** t_step)
        texels = texels - lr * mh / (np.sqrt(vh) + 1e-8)
        np.clip(texels, 0.0, 1.0, out=texels)
        if mirror is not None:
            texels = texels.reshape(-1, 3)[mirror].reshape(texels.shape)

    out = TextureAtlas(texels=texels, valid=atlas.valid.copy())
    final_photo = history[-1][1] if history else (initial_photo or 0.0)
    report = FinetuneReport(loss_history=history,
                            initial_photo=initial_photo or 0.0,
                            final_photo=final_photo)
    if heldout:
        report.heldout_psnr_before = _heldout_psnr(mesh, atlas, heldout)
        report.heldout_psnr_after = _heldout_psnr(mesh, out, heldout)
    return out, report
