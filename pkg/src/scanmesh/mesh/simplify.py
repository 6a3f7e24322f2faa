"""Quadric-error-metric edge-collapse mesh decimation.

Vertex quadrics are sums of incident face plane quadrics; collapse targets
solve the 3x3 quadric system (midpoint fallback when singular within
1e-10).  Collapses that break the edge link condition or flip a surviving
face normal are rejected.  With preserve_boundary, boundary-boundary edges
are kept and interior-boundary collapses snap to the boundary vertex.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .tri import TriangleMesh


@dataclass(frozen=True)
class SimplifyConfig:
    target_face_fraction: float = 0.004
    preserve_boundary: bool = True

    def __post_init__(self):
        if not (0 < self.target_face_fraction <= 1):
            raise ValueError("target_face_fraction must be in (0, 1]")


@dataclass
class SimplifyResult:
    mesh: TriangleMesh
    reached_target: bool
    collapses: int


def _plane_quadric(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-300:
        return np.zeros((4, 4))
    n = n / norm
    d = -np.dot(n, p0)
    p = np.array([n[0], n[1], n[2], d])
    return np.outer(p, p)


def _quadric_cost(Q, x):
    xh = np.array([x[0], x[1], x[2], 1.0])
    return float(xh @ Q @ xh)


def _optimal_position(Q, pa, pb, force=None):
    if force is not None:
        return force, _quadric_cost(Q, force)
    A = Q[:3, :3]
    b = -Q[:3, 3]
    # Relative singularity test keeps the threshold scale-free.
    scale = np.abs(A).max()
    if scale < 1e-300 or abs(np.linalg.det(A)) < 1e-10 * scale ** 3:
        x = 0.5 * (pa + pb)
    else:
        x = np.linalg.solve(A, b)
    return x, _quadric_cost(Q, x)


def quadric_simplify(mesh: TriangleMesh, cfg: SimplifyConfig) -> SimplifyResult:
    F_in = mesh.n_faces
    target = int(np.ceil(cfg.target_face_fraction * F_in))
    if target >= F_in:
        return SimplifyResult(TriangleMesh(mesh.vertices.copy(),
                                           mesh.faces.copy()), True, 0)

    V = mesh.vertices.copy()
    faces = [list(f) for f in mesh.faces]
    alive_face = [True] * len(faces)
    v_faces = [set() for _ in range(len(V))]
    for fi, f in enumerate(faces):
        for v in f:
            v_faces[v].add(fi)

    Q = [np.zeros((4, 4)) for _ in range(len(V))]
    for fi, f in enumerate(faces):
        K = _plane_quadric(V[f[0]], V[f[1]], V[f[2]])
        for v in f:
            Q[v] += K

    # Boundary vertices: endpoints of edges with a single incident face.
    edge_count: dict[tuple, int] = {}
    for f in faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    boundary = np.zeros(len(V), dtype=bool)
    for (a, b), cnt in edge_count.items():
        if cnt == 1:
            boundary[a] = boundary[b] = True

    version = np.zeros(len(V), dtype=np.int64)
    counter = 0
    heap: list = []

    def neighbors(v):
        out = set()
        for fi in v_faces[v]:
            out.update(faces[fi])
        out.discard(v)
        return out

    def push_edge(a, b):
        nonlocal counter
        if a > b:
            a, b = b, a
        if cfg.preserve_boundary and boundary[a] and boundary[b]:
            return
        force = None
        if cfg.preserve_boundary and boundary[a]:
            force = V[a]
        elif cfg.preserve_boundary and boundary[b]:
            force = V[b]
        pos, cost = _optimal_position(Q[a] + Q[b], V[a], V[b], force)
        counter += 1
        heapq.heappush(heap, (cost, counter, a, b, pos,
                              version[a], version[b]))

    pushed = set()
    for f in faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (min(a, b), max(a, b))
            if key not in pushed:
                pushed.add(key)
                push_edge(*key)
    del pushed

    def link_condition(a, b):
        shared_faces = v_faces[a] & v_faces[b]
        third = set()
        for fi in shared_faces:
            third.update(faces[fi])
        third -= {a, b}
        return neighbors(a) & neighbors(b) == third and len(shared_faces) >= 1

    def flips_normal(a, b, pos):
        for fi in v_faces[a] | v_faces[b]:
            f = faces[fi]
            if a in f and b in f:
                continue  # face dies with the collapse
            p = [V[v].copy() for v in f]
            n_old = np.cross(p[1] - p[0], p[2] - p[0])
            q = [pos if v in (a, b) else V[v] for v in f]
            n_new = np.cross(q[1] - q[0], q[2] - q[0])
            denom = np.linalg.norm(n_old) * np.linalg.norm(n_new)
            if denom < 1e-300 or np.dot(n_old, n_new) <= 1e-12 * denom:
                return True
        return False

    n_alive = F_in
    collapses = 0
    while n_alive > target and heap:
        cost, _, a, b, pos, va, vb = heapq.heappop(heap)
        if version[a] != va or version[b] != vb:
            continue
        if not v_faces[a] or not v_faces[b]:
            continue
        if not link_condition(a, b):
            continue
        if flips_normal(a, b, pos):
            continue
        # Collapse b into a at pos.
        V[a] = pos
        Q[a] = Q[a] + Q[b]
        if boundary[b]:
            boundary[a] = True
        dying = v_faces[a] & v_faces[b]
        for fi in dying:
            alive_face[fi] = False
            n_alive -= 1
            for v in faces[fi]:
                v_faces[v].discard(fi)
        for fi in list(v_faces[b]):
            faces[fi] = [a if v == b else v for v in faces[fi]]
            v_faces[a].add(fi)
            v_faces[b].discard(fi)
        version[a] += 1
        version[b] += 1
        collapses += 1
        for nb in sorted(neighbors(a)):
            push_edge(a, nb)

    # Compact the result.
    out_faces = [faces[fi] for fi in range(len(faces)) if alive_face[fi]]
    used = sorted({v for f in out_faces for v in f})
    remap = {v: i for i, v in enumerate(used)}
    new_faces = np.array([[remap[v] for v in f] for f in out_faces],
                         dtype=np.int64)
    new_verts = V[used]
    result = TriangleMesh(new_verts, new_faces)
    return SimplifyResult(result, n_alive <= target, collapses)
