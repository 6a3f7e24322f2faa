"""Per-face right-triangle UV atlas.

Every face gets its own chart: a right triangle inset by a gutter inside a
grid cell of the atlas.  Charts (including their one-texel bilinear
support ring) are pairwise disjoint, so texture fetches inside a face
never read another face's texels.  UVs use the integer-centered texel
convention: uv * (size - 1) is the continuous texel coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import AtlasOverflow
from .tri import TriangleMesh

GUTTER = 2


@dataclass
class AtlasLayout:
    size: int
    cell: int
    cells_per_row: int
    corners: np.ndarray       # (F, 3, 2) chart corner texel coords
    owner: np.ndarray         # (S, S) int64, face id owning each texel, -1
    valid: np.ndarray         # (S, S) bool, owner dilated by 1 texel
    gutter_source: np.ndarray = None  # (S, S) flat index of nearest owned texel

    def face_texels(self, face: int):
        """Texel integer coords (u, v) owned by the face's chart (without
        the dilation ring)."""
        vs, us = np.nonzero(self.owner == face)
        return np.stack([us, vs], axis=1)

    def face_texels_padded(self, face: int):
        """Owned texels plus the one-texel support ring inside the cell."""
        A, B, C = self.corners[face]
        u0 = max(int(A[0]) - 1, 0)
        v0 = max(int(A[1]) - 1, 0)
        u1 = min(int(B[0]) + 1, self.size - 1)
        v1 = min(int(C[1]) + 1, self.size - 1)
        uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
        pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
        bary = self.barycentric(face, pts.astype(np.float64))
        keep = (bary >= -0.75 - 1e-9).all(axis=1)
        return pts[keep], bary[keep]

    def barycentric(self, face: int, texels: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of texel positions w.r.t. the chart
        triangle (A, B, C); legs are axis-aligned so this is affine."""
        A, B, C = self.corners[face].astype(np.float64)
        leg_u = B[0] - A[0]
        leg_v = C[1] - A[1]
        wb = (texels[:, 0] - A[0]) / leg_u
        wc = (texels[:, 1] - A[1]) / leg_v
        wa = 1.0 - wb - wc
        return np.stack([wa, wb, wc], axis=1)


def build_uv_atlas(mesh: TriangleMesh, texel_budget: int = 1024):
    """Assigns per-corner UVs and returns (mesh, AtlasLayout).

    Raises AtlasOverflow when the budget cannot give every chart at least a
    2-texel leg after gutters.
    """
    F = mesh.n_faces
    if F == 0:
        raise ValueError("cannot build an atlas for an empty mesh")
    S = int(texel_budget)
    cpr = int(np.ceil(np.sqrt(F)))
    cell = S // cpr
    min_cell = 2 * GUTTER + 3   # leg >= 2 texels
    if cell < min_cell:
        raise AtlasOverflow(required=cpr * min_cell, budget=S)

    corners = np.zeros((F, 3, 2), dtype=np.int64)
    owner = np.full((S, S), -1, dtype=np.int64)
    for f in range(F):
        cxy = divmod(f, cpr)
        cy, cx = cxy
        x0 = cx * cell
        y0 = cy * cell
        A = (x0 + GUTTER, y0 + GUTTER)
        B = (x0 + cell - GUTTER - 1, y0 + GUTTER)
        C = (x0 + GUTTER, y0 + cell - GUTTER - 1)
        corners[f] = [A, B, C]
        # Ownership: texel centers inside the right triangle.
        leg_u = B[0] - A[0]
        leg_v = C[1] - A[1]
        uu, vv = np.meshgrid(np.arange(A[0], B[0] + 1),
                             np.arange(A[1], C[1] + 1))
        wb = (uu - A[0]) / leg_u
        wc = (vv - A[1]) / leg_v
        inside = wb + wc <= 1.0 + 1e-12
        owner[vv[inside], uu[inside]] = f

    from scipy.ndimage import binary_dilation, distance_transform_edt
    valid = binary_dilation(owner >= 0, iterations=1)

    # Gutter mirror: every texel maps to its nearest owned texel (itself if
    # owned).  Charts are several texels apart, so a gutter texel's nearest
    # owned texel always belongs to its own chart.
    _, (iy, ix) = distance_transform_edt(owner < 0, return_indices=True)
    gutter_source = (iy * S + ix).astype(np.int64)

    uvs = corners.astype(np.float64) / (S - 1)
    out = TriangleMesh(mesh.vertices.copy(), mesh.faces.copy())
    out.corner_uvs = uvs
    out.face_chart = np.arange(F, dtype=np.int64)
    layout = AtlasLayout(size=S, cell=cell, cells_per_row=cpr,
                         corners=corners, owner=owner, valid=valid,
                         gutter_source=gutter_source)
    return out, layout
