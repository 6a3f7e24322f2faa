"""Marching cubes isosurface extraction.

Vertices are placed on grid edges by linear interpolation of the sampled
values and welded through a canonical (grid point, axis) edge key, so the
output of a watertight SDF is a closed, consistently oriented mesh
(outward normals point toward increasing field values).
"""

from __future__ import annotations

import numpy as np

from ..errors import EmptySurface
from ._mc_tables import EDGE_ENDPOINTS, EDGE_TABLE, TRI_TABLE
from .tri import TriangleMesh

# Cube corner offsets in the table's numbering.
_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=np.int64)

# Canonical edge key: (corner offset of the low endpoint, axis).
_EDGE_KEY = []
for _a, _b in EDGE_ENDPOINTS:
    pa, pb = _CORNERS[_a], _CORNERS[_b]
    axis = int(np.nonzero(pa != pb)[0][0])
    low = pa if pa[axis] < pb[axis] else pb
    _EDGE_KEY.append((low[0], low[1], low[2], axis))


def _sample_grid(sdf, lo, hi, resolution):
    res = np.array(resolution if np.ndim(resolution) else [resolution] * 3,
                   dtype=np.int64)
    axes = [np.linspace(lo[i], hi[i], res[i] + 1) for i in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    if hasattr(sdf, "value"):
        vals = np.asarray(sdf.value(pts)).reshape(-1)
    else:
        vals = np.asarray(sdf(pts)).reshape(-1)
    return vals.reshape(res + 1), axes


def marching_cubes(sdf, resolution, lo=None, hi=None,
                   isolevel: float = 0.0) -> TriangleMesh:
    """Extracts the isolevel surface of a scalar field.

    sdf is either a field object with .value(points) and .lo/.hi, or a
    callable (N, 3) -> (N,) with explicit lo/hi bounds.  resolution counts
    cells per axis (>= 2).
    """
    if lo is None or hi is None:
        lo, hi = np.asarray(sdf.lo, dtype=np.float64), np.asarray(
            sdf.hi, dtype=np.float64)
    else:
        lo = np.asarray(lo, dtype=np.float64).reshape(3)
        hi = np.asarray(hi, dtype=np.float64).reshape(3)
    if np.min(np.atleast_1d(resolution)) < 2:
        raise ValueError("resolution must be >= 2 cells per axis")
    values, axes = _sample_grid(sdf, lo, hi, resolution)
    nx, ny, nz = np.array(values.shape) - 1

    # Samples exactly at the isolevel would place vertices on grid points
    # shared by several edges, producing degenerate triangles; nudge them.
    scale = max(float(np.max(np.abs(values))), 1e-30)
    values = np.where(values == isolevel, isolevel + 1e-12 * scale, values)

    inside = values < isolevel
    if not inside.any() or inside.all():
        raise EmptySurface("isosurface does not intersect the grid")

    # Case index per cell, vectorized: bit i set when corner i is inside.
    case = np.zeros((nx, ny, nz), dtype=np.int64)
    for i, (dx, dy, dz) in enumerate(_CORNERS):
        case |= (inside[dx:nx + dx, dy:ny + dy, dz:nz + dz] << i)
    active = np.argwhere((case != 0) & (case != 255))

    edge_table = np.asarray(EDGE_TABLE, dtype=np.int64)
    verts: list[np.ndarray] = []
    vert_index: dict[tuple, int] = {}
    faces: list[list[int]] = []

    ax_x, ax_y, ax_z = axes

    def edge_vertex(cx, cy, cz, e):
        kx, ky, kz, axis = _EDGE_KEY[e]
        gx, gy, gz = cx + kx, cy + ky, cz + kz
        key = (gx, gy, gz, axis)
        idx = vert_index.get(key)
        if idx is not None:
            return idx
        g1 = [gx, gy, gz]
        g1[axis] += 1
        v0 = values[gx, gy, gz]
        v1 = values[g1[0], g1[1], g1[2]]
        denom = v1 - v0
        t = 0.5 if denom == 0 else np.clip((isolevel - v0) / denom, 0.0, 1.0)
        p0 = np.array([ax_x[gx], ax_y[gy], ax_z[gz]])
        p1 = p0.copy()
        p1[axis] = (ax_x, ax_y, ax_z)[axis][g1[axis]]
        p = p0 + t * (p1 - p0)
        idx = len(verts)
        verts.append(p)
        vert_index[key] = idx
        return idx

    for cx, cy, cz in active:
        c = case[cx, cy, cz]
        if edge_table[c] == 0:
            continue
        tri_row = TRI_TABLE[c]
        k = 0
        while tri_row[k] != -1:
            ia = edge_vertex(cx, cy, cz, tri_row[k])
            ib = edge_vertex(cx, cy, cz, tri_row[k + 1])
            ic = edge_vertex(cx, cy, cz, tri_row[k + 2])
            if ia != ib and ib != ic and ic != ia:
                faces.append([ia, ib, ic])
            k += 3

    if not faces:
        raise EmptySurface("no triangles produced")
    mesh = TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))
    # Orient outward (toward increasing values): probe one face.
    c0 = mesh.face_centroids()[0]
    n0 = mesh.face_normals()[0]
    h = 1e-4 * float(np.max(hi - lo))
    fplus = _field_at(sdf, c0 + h * n0)
    fminus = _field_at(sdf, c0 - h * n0)
    if fplus < fminus:
        mesh.faces = mesh.faces[:, ::-1].copy()
    return mesh


def _field_at(sdf, p):
    if hasattr(sdf, "value"):
        return float(np.asarray(sdf.value(p[None])).reshape(-1)[0])
    return float(np.asarray(sdf(p[None])).reshape(-1)[0])
