"""Reference mesh constructions used by the synthetic scenes and tests."""

from __future__ import annotations

import numpy as np

from .tri import TriangleMesh


def icosphere(radius: float = 0.5, center=(0.0, 0.0, 0.0),
              subdivisions: int = 3) -> TriangleMesh:
    """Subdivided icosahedron projected onto the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        vlist = list(verts)
        midpoint = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                m = vlist[a] + vlist[b]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(vlist)
                vlist.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(vlist)
        faces = np.array(new_faces, dtype=np.int64)
    return TriangleMesh(verts * radius + np.asarray(center, dtype=np.float64),
                        faces)


def box_mesh(center=(0.0, 0.0, 0.0), half_extent=(0.5, 0.5, 0.5)) -> TriangleMesh:
    """Axis-aligned box, 12 triangles with outward normals."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half_extent, dtype=np.float64)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1)
                        for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    verts = c + corners * h
    # Corner index = 4*sx + 2*sy + sz with s in {0,1}.
    quads = [
        ([0, 1, 3, 2], (-1, 0, 0)), ([4, 6, 7, 5], (1, 0, 0)),
        ([0, 4, 5, 1], (0, -1, 0)), ([2, 3, 7, 6], (0, 1, 0)),
        ([0, 2, 6, 4], (0, 0, -1)), ([1, 5, 7, 3], (0, 0, 1)),
    ]
    faces = []
    for q, n in quads:
        a, b, cc, d = q
        for tri in ([a, b, cc], [a, cc, d]):
            p = verts[tri]
            nrm = np.cross(p[1] - p[0], p[2] - p[0])
            if np.dot(nrm, n) < 0:
                tri = tri[::-1]
            faces.append(tri)
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def quad_grid_mesh(center=(0.0, 0.0, 0.0), size=(1.0, 1.0), cells=(8, 8),
                   normal_axis: int = 2) -> TriangleMesh:
    """Planar rectangle subdivided into a cells[0] x cells[1] triangle grid.

    The plane spans the two axes other than normal_axis; triangle winding
    gives outward normals along -normal_axis (facing cameras placed on the
    negative side looking toward positive axis).
    """
    cx, cy = cells
    sx, sy = size
    ax = [i for i in range(3) if i != normal_axis]
    us = np.linspace(-sx / 2, sx / 2, cx + 1)
    vs = np.linspace(-sy / 2, sy / 2, cy + 1)
    verts = np.zeros(((cx + 1) * (cy + 1), 3))
    for j, v in enumerate(vs):
        for i, u in enumerate(us):
            k = j * (cx + 1) + i
            verts[k, ax[0]] = u
            verts[k, ax[1]] = v
    verts += np.asarray(center, dtype=np.float64)
    faces = []
    for j in range(cy):
        for i in range(cx):
            a = j * (cx + 1) + i
            b = a + 1
            c = a + (cx + 1)
            d = c + 1
            faces.append([a, b, d])
            faces.append([a, d, c])
    mesh = TriangleMesh(verts, np.array(faces, dtype=np.int64))
    # Flip winding if normals point along +normal_axis.
    if mesh.face_normals()[0, normal_axis] > 0:
        mesh.faces = mesh.faces[:, ::-1].copy()
    return mesh
