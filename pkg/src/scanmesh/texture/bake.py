"""Initial texture baking by best-view projection.

Each face is textured from the single view that maximizes
cos(normal, direction-to-camera) x projected area among views where the
face passes a depth-buffer visibility test; texels are filled by
projecting texel centers into that view and bilinearly sampling its image.
Faces visible nowhere fall back to mid-gray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Frame, bilinear_sample_many, project_many
from ..mesh.atlas import AtlasLayout
from ..mesh.tri import TriangleMesh
from .raster import GeometryBuffers, TextureAtlas, rasterize_geometry

MID_GRAY = 0.5
DEPTH_TOL = 1e-3  # times scene scale


@dataclass
class BakeReport:
    face_view: np.ndarray        # (F,) chosen frame index, -1 = fallback
    fallback_faces: int


def _visibility_score(mesh: TriangleMesh, frame: Frame,
                      geom: GeometryBuffers, scale: float):
    """Per-face score in this view; -inf when not visible."""
    centroids = mesh.face_centroids()
    normals = mesh.face_normals()
    pix, z, in_front = project_many(frame.intrinsics, frame.pose, centroids)
    W, H = frame.intrinsics.width, frame.intrinsics.height
    inb = in_front & (pix[:, 0] >= 0) & (pix[:, 0] <= W - 1) \
        & (pix[:, 1] >= 0) & (pix[:, 1] <= H - 1)
    depth_ok = np.zeros(mesh.n_faces, dtype=bool)
    if inb.any():
        d, _ = bilinear_sample_many(geom.depth, pix[inb])
        depth_ok[inb] = np.abs(d - z[inb]) < DEPTH_TOL * scale
    cam_center = frame.pose.center()
    to_cam = cam_center - centroids
    to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-12)
    cosang = np.einsum("ij,ij->i", normals, to_cam)
    # Projected area from the projected corners.
    corners = mesh.face_corners().reshape(-1, 3)
    cp, cz, c_ok = project_many(frame.intrinsics, frame.pose, corners)
    cp = cp.reshape(-1, 3, 2)
    area = 0.5 * np.abs(
        (cp[:, 1, 0] - cp[:, 0, 0]) * (cp[:, 2, 1] - cp[:, 0, 1])
        - (cp[:, 1, 1] - cp[:, 0, 1]) * (cp[:, 2, 0] - cp[:, 0, 0]))
    ok = depth_ok & (cosang > 0) & c_ok.reshape(-1, 3).all(axis=1)
    return np.where(ok, cosang * area, -np.inf)


def bake_initial_texture(mesh: TriangleMesh, layout: AtlasLayout,
                         frames: list[Frame]):
    """Returns (TextureAtlas, BakeReport).  mesh must carry the atlas UVs
    produced with the same layout."""
    if mesh.corner_uvs is None:
        raise ValueError("mesh has no UV atlas")
    scale = mesh.bbox_diagonal()
    geoms = [rasterize_geometry(mesh, f.intrinsics, f.pose,
                                (f.intrinsics.width, f.intrinsics.height))
             for f in frames]
    scores = np.stack([_visibility_score(mesh, f, g, scale)
                       for f, g in zip(frames, geoms)])   # (n_views, F)
    best = np.argmax(scores, axis=0)
    best = np.where(np.isfinite(scores[best, np.arange(mesh.n_faces)]),
                    best, -1)

    S = layout.size
    texels = np.full((S, S, 3), MID_GRAY)
    corners3d = mesh.face_corners()
    for f in range(mesh.n_faces):
        view = int(best[f])
        if view < 0:
            continue
        frame = frames[view]
        tex, bary = layout.face_texels_padded(f)
        # Clamp ring texels onto the face before projecting.
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        pts = bary @ corners3d[f]
        pix, _, in_front = project_many(frame.intrinsics, frame.pose, pts)
        vals, inside = bilinear_sample_many(frame.image, pix)
        good = in_front & inside
        if good.any():
            texels[tex[good, 1], tex[good, 0]] = vals[good]

    # Gutter texels mirror their nearest owned texel so bilinear fetches at
    # chart borders stay consistent with the face interior.
    if layout.gutter_source is not None:
        flat = texels.reshape(-1, 3)
        texels = flat[layout.gutter_source.ravel()].reshape(texels.shape)

    atlas = TextureAtlas(texels=texels, valid=layout.valid.copy())
    report = BakeReport(face_view=best, fallback_faces=int((best < 0).sum()))
    return atlas, report
