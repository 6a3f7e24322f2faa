"""Deterministic triangle rasterizer with perspective-correct attributes
and texel-level gradients.

Geometry is fixed during texture optimization, so rasterization is split
into a geometry pass (face ids, barycentrics, depth, UVs; cacheable) and a
shading pass (bilinear texel fetch) whose adjoint scatters image gradients
into the four support texels of each covered pixel.

Coverage uses edge functions with a consistent boundary partition: pixels
exactly on an edge belong to the triangle whose directed edge points down
(or right when horizontal), so shared edges are covered exactly once.
Depth ties at a pixel keep the lower face index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CameraIntrinsics, Pose
from ..mesh.tri import TriangleMesh


@dataclass
class TextureAtlas:
    texels: np.ndarray          # (S, S, 3) float in [0, 1]
    valid: np.ndarray           # (S, S) bool

    def __post_init__(self):
        self.texels = np.asarray(self.texels, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def size(self) -> int:
        return self.texels.shape[0]

    def clamp(self):
        np.clip(self.texels, 0.0, 1.0, out=self.texels)


@dataclass
class GeometryBuffers:
    face_id: np.ndarray         # (H, W) int64, -1 = background
    bary: np.ndarray            # (H, W, 3) perspective-correct
    depth: np.ndarray           # (H, W) camera z, 0 = background
    uv: np.ndarray              # (H, W, 2)

    @property
    def covered(self) -> np.ndarray:
        return self.face_id >= 0


@dataclass
class RenderedBuffers:
    color: np.ndarray           # (H, W, 3)
    depth: np.ndarray           # (H, W)
    face_id: np.ndarray         # (H, W)
    bary: np.ndarray            # (H, W, 3)


def rasterize_geometry(mesh: TriangleMesh, intrinsics: CameraIntrinsics,
                       pose: Pose, size: tuple[int, int]) -> GeometryBuffers:
    W, H = size
    face_id = np.full((H, W), -1, dtype=np.int64)
    zbuf = np.full((H, W), np.inf)
    bary = np.zeros((H, W, 3))
    uv = np.zeros((H, W, 2))

    cam = pose.apply(mesh.vertices)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        py = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    has_uv = mesh.corner_uvs is not None

    for f in range(mesh.n_faces):
        vi = mesh.faces[f]
        if np.any(z[vi] <= 1e-9):
            continue
        xs, ys, zs = px[vi], py[vi], z[vi]
        x0 = max(int(np.ceil(xs.min())), 0)
        x1 = min(int(np.floor(xs.max())), W - 1)
        y0 = max(int(np.ceil(ys.min())), 0)
        y1 = min(int(np.floor(ys.max())), H - 1)
        if x0 > x1 or y0 > y1:
            continue
        area = ((xs[1] - xs[0]) * (ys[2] - ys[0])
                - (ys[1] - ys[0]) * (xs[2] - xs[0]))
        if area == 0:
            continue
        order = (0, 1, 2) if area > 0 else (0, 2, 1)
        ox = xs[list(order)]
        oy = ys[list(order)]
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        cover = np.ones(gx.shape, dtype=bool)
        ws = []
        for k in range(3):
            ax, ay = ox[(k + 1) % 3], oy[(k + 1) % 3]
            bx, by = ox[(k + 2) % 3], oy[(k + 2) % 3]
            e = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)
            dy = by - ay
            dx = bx - ax
            on_edge_keep = dy > 0 or (dy == 0 and dx > 0)
            cover &= (e > 0) | ((e == 0) & on_edge_keep)
            ws.append(e)
        if not cover.any():
            continue
        wsum = ws[0] + ws[1] + ws[2]
        sb = np.stack(ws, axis=-1) / wsum[..., None]   # screen barycentric
        # Perspective correction with camera-space z.
        zo = zs[list(order)]
        inv = sb / zo[None, None, :]
        pb = inv / inv.sum(axis=-1, keepdims=True)
        depth_f = pb @ zo
        closer = cover & (depth_f < zbuf[y0:y1 + 1, x0:x1 + 1])
        if not closer.any():
            continue
        # Un-permute barycentrics to the original corner order.
        pb_orig = np.empty_like(pb)
        for slot, corner in enumerate(order):
            pb_orig[..., corner] = pb[..., slot]
        ys_sl = slice(y0, y1 + 1)
        xs_sl = slice(x0, x1 + 1)
        zregion = zbuf[ys_sl, xs_sl]
        zregion[closer] = depth_f[closer]
        face_id[ys_sl, xs_sl][closer] = f
        bregion = bary[ys_sl, xs_sl]
        bregion[closer] = pb_orig[closer]
        bary[ys_sl, xs_sl] = bregion
        if has_uv:
            uv_f = pb_orig @ mesh.corner_uvs[f]
            uregion = uv[ys_sl, xs_sl]
            uregion[closer] = uv_f[closer]
            uv[ys_sl, xs_sl] = uregion

    depth = np.where(face_id >= 0, zbuf, 0.0)
    return GeometryBuffers(face_id=face_id, bary=bary, depth=depth, uv=uv)


def _texel_support(geom: GeometryBuffers, atlas_size: int):
    """Bilinear support of every covered pixel: 4 texel flat indices and
    weights."""
    cov = geom.covered
    uvs = geom.uv[cov]
    t = uvs * (atlas_size - 1)
    x0 = np.clip(np.floor(t[:, 0]).astype(np.int64), 0, atlas_size - 2)
    y0 = np.clip(np.floor(t[:, 1]).astype(np.int64), 0, atlas_size - 2)
    fx = t[:, 0] - x0
    fy = t[:, 1] - y0
    idx = np.stack([y0 * atlas_size + x0,
                    y0 * atlas_size + x0 + 1,
                    (y0 + 1) * atlas_size + x0,
                    (y0 + 1) * atlas_size + x0 + 1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                  (1 - fx) * fy, fx * fy], axis=1)
    return cov, idx, w


def shade(geom: GeometryBuffers, atlas: TextureAtlas,
          background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Bilinear texture fetch for all covered pixels."""
    H, W = geom.face_id.shape
    img = np.tile(np.asarray(background, dtype=np.float64), (H, W, 1))
    cov, idx, w = _texel_support(geom, atlas.size)
    flat = atlas.texels.reshape(-1, 3)
    img[cov] = np.einsum("nk,nkc->nc", w, flat[idx])
    return img


def shade_backward(geom: GeometryBuffers, atlas_size: int,
                   dimage: np.ndarray) -> np.ndarray:
    """Adjoint of shade: scatters pixel gradients to texels, (S, S, 3)."""
    cov, idx, w = _texel_support(geom, atlas_size)
    dpix = np.asarray(dimage, dtype=np.float64)[cov]
    contrib = w[:, :, None] * dpix[:, None, :]
    flat_idx = idx.ravel()
    out = np.stack([np.bincount(flat_idx, weights=contrib[:, :, c].ravel(),
                                minlength=atlas_size * atlas_size)
                    for c in range(3)], axis=1)
    return out.reshape(atlas_size, atlas_size, 3)


def rasterize(mesh: TriangleMesh, atlas: TextureAtlas,
              intrinsics: CameraIntrinsics, pose: Pose,
              size: tuple[int, int],
              background=(0.0, 0.0, 0.0)) -> RenderedBuffers:
    """Full render: color, depth, face ids, barycentrics."""
    geom = rasterize_geometry(mesh, intrinsics, pose, size)
    color = shade(geom, atlas, background)
    return RenderedBuffers(color=color, depth=geom.depth,
                           face_id=geom.face_id, bary=geom.bary)
