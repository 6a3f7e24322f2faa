"""Sparse voxel occupancy over the field domain, built from a surface mesh,
with ray traversal for surface-guided sampling.

Leaves form a (2^depth)^3 grid; a leaf is marked when it intersects any
mesh triangle (exact separating-axis test), then the marked set is dilated
by a configurable margin.  Ray traversal walks the grid (Amanatides-Woo in
vectorized lockstep) and returns the marked entry/exit intervals, merged
over runs of consecutive marked cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyMesh
from ..mesh.tri import TriangleMesh


def _tri_box_overlap(centers: np.ndarray, half: np.ndarray,
                     tri: np.ndarray) -> np.ndarray:
    """Exact triangle vs axis-aligned box tests (separating axis theorem),
    vectorized over boxes.  centers: (M, 3); half: (3,); tri: (3, 3)."""
    v = tri[None, :, :] - centers[:, None, :]        # (M, 3, 3)
    M = len(centers)
    ok = np.ones(M, dtype=bool)

    # 1. Box axes: triangle AABB vs box.
    for a in range(3):
        ok &= (v[:, :, a].min(axis=1) <= half[a] + 1e-12) \
            & (v[:, :, a].max(axis=1) >= -half[a] - 1e-12)

    # 2. Triangle plane vs box.
    e0 = tri[1] - tri[0]
    e1 = tri[2] - tri[1]
    e2 = tri[0] - tri[2]
    n = np.cross(e0, e1)
    r = np.abs(n) @ half
    ok &= np.abs(np.einsum("mj,j->m", centers - tri[0], n)) <= r + 1e-12

    # 3. Nine cross-product axes.
    for e in (e0, e1, e2):
        for a in range(3):
            axis = np.zeros(3)
            axis[a] = 1.0
            cross = np.cross(axis, e)
            if np.linalg.norm(cross) < 1e-15:
                continue
            p = np.einsum("mkj,j->mk", v, cross)     # (M, 3)
            rad = half @ np.abs(cross)
            ok &= (p.min(axis=1) <= rad + 1e-12) & (p.max(axis=1) >= -rad - 1e-12)
    return ok


@dataclass
class SparseVoxelOctree:
    lo: np.ndarray
    hi: np.ndarray
    depth: int
    occupancy: np.ndarray   # (R, R, R) bool with R = 2**depth

    @property
    def resolution(self) -> int:
        return 2 ** self.depth

    def cell_size(self) -> np.ndarray:
        return (self.hi - self.lo) / self.resolution

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        g = (pts - self.lo) / self.cell_size()
        idx = np.floor(g).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.resolution), axis=1)
        idx = np.clip(idx, 0, self.resolution - 1)
        out = np.zeros(len(pts), dtype=bool)
        out[inside] = self.occupancy[idx[inside, 0], idx[inside, 1],
                                     idx[inside, 2]]
        return out

    # -- ray traversal -----------------------------------------------------
    def ray_segments(self, origins, dirs, max_segments: int = 32):
        """Marked-interval traversal.  Returns (seg (B, S, 2), counts (B,))
        with consecutive marked cells merged into one segment."""
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        B = len(origins)
        R = self.resolution
        cs = self.cell_size()

        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        t1 = (self.lo - origins) * inv
        t2 = (self.hi - origins) * inv
        t_enter = np.maximum(np.nanmax(np.minimum(t1, t2), axis=1), 0.0)
        t_exit = np.nanmin(np.maximum(t1, t2), axis=1)
        alive = t_exit > t_enter + 1e-12

        eps = 1e-9 * max(np.max(self.hi - self.lo), 1e-12)
        p0 = origins + (t_enter + eps)[:, None] * dirs
        idx = np.clip(np.floor((p0 - self.lo) / cs).astype(np.int64), 0, R - 1)
        step = np.where(dirs > 0, 1, -1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_delta = np.abs(cs / dirs)
        next_bound = self.lo + (idx + (step > 0)) * cs
        with np.errstate(divide="ignore", invalid="ignore"):
            t_max = (next_bound - origins) * inv
        t_max = np.where(np.isfinite(t_max), t_max, np.inf)
        t_delta = np.where(np.isfinite(t_delta), t_delta, np.inf)

        seg = np.zeros((B, max_segments, 2))
        counts = np.zeros(B, dtype=np.int64)
        open_seg = np.full(B, False)
        open_t = np.zeros(B)
        t_cur = t_enter.copy()

        max_steps = 3 * R + 2
        for _ in range(max_steps):
            if not alive.any():
                break
            marked = np.zeros(B, dtype=bool)
            a = alive
            marked[a] = self.occupancy[idx[a, 0], idx[a, 1], idx[a, 2]]
            axis = np.argmin(t_max, axis=1)
            t_next = np.minimum(t_max[np.arange(B), axis], t_exit)

            opening = a & marked & ~open_seg
            open_t[opening] = t_cur[opening]
            open_seg[opening] = True
            closing = a & ~marked & open_seg
            ci = np.nonzero(closing & (counts < max_segments))[0]
            seg[ci, counts[ci], 0] = open_t[ci]
            seg[ci, counts[ci], 1] = t_cur[ci]
            counts[ci] += 1
            open_seg[closing] = False

            # Advance.
            rows = np.nonzero(a)[0]
            idx[rows, axis[rows]] += step[rows, axis[rows]]
            t_max[rows, axis[rows]] += t_delta[rows, axis[rows]]
            t_cur = np.where(a, t_next, t_cur)
            oob = np.any((idx < 0) | (idx >= R), axis=1)
            alive = a & ~oob & (t_cur < t_exit - 1e-12)

        # Close any segment still open at exit.
        ci = np.nonzero(open_seg & (counts < max_segments))[0]
        seg[ci, counts[ci], 0] = open_t[ci]
        seg[ci, counts[ci], 1] = t_cur[ci]
        counts[ci] += 1
        return seg, counts

    def sample_rays(self, origins, dirs, n: int,
                    jitter: np.ndarray | None = None):
        """n sample positions per ray distributed over the marked intervals
        (stratified by arc length).  Returns (t (B, n), hit (B,))."""
        seg, counts = self.ray_segments(origins, dirs)
        B, S, _ = seg.shape
        lens = np.maximum(seg[:, :, 1] - seg[:, :, 0], 0.0)
        valid = np.arange(S)[None, :] < counts[:, None]
        lens = np.where(valid, lens, 0.0)
        total = lens.sum(axis=1)
        hit = total > 1e-12
        u = np.full((B, n), 0.5) if jitter is None else np.asarray(jitter)
        arc = (np.arange(n) + u) / n * total[:, None]
        cum = np.cumsum(lens, axis=1)
        cum_before = cum - lens
        # Segment index per sample: count of completed segments before arc.
        k = np.sum(arc[:, :, None] >= cum[:, None, :] - 1e-15, axis=2)
        k = np.minimum(k, np.maximum(counts - 1, 0)[:, None])
        rows = np.arange(B)[:, None]
        t = seg[rows, k, 0] + (arc - cum_before[rows, k])
        # Keep samples strictly interior to their segment.
        t = np.clip(t, seg[rows, k, 0] + 1e-9, seg[rows, k, 1] - 1e-9)
        t = np.where(hit[:, None], t, 0.0)
        return t, hit


def build_sparse_voxels(mesh: TriangleMesh, depth: int, lo=None, hi=None,
                        dilation: int = 1) -> SparseVoxelOctree:
    """Marks leaf voxels intersecting any mesh triangle, dilated by the
    given margin (in voxels).  lo/hi default to the mesh bounds padded by
    2%; pass the field domain to align sampling with rendering."""
    if mesh.n_faces == 0:
        raise EmptyMesh("cannot build sparse voxels from an empty mesh")
    if lo is None or hi is None:
        mlo, mhi = mesh.bounds()
        pad = 0.02 * (mhi - mlo).max()
        lo = mlo - pad if lo is None else np.asarray(lo, dtype=np.float64)
        hi = mhi + pad if hi is None else np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64).reshape(3)
    hi = np.asarray(hi, dtype=np.float64).reshape(3)
    R = 2 ** depth
    occ = np.zeros((R, R, R), dtype=bool)
    cs = (hi - lo) / R
    half = cs / 2
    corners = mesh.vertices[mesh.faces]          # (F, 3, 3)
    tlo = corners.min(axis=1)
    thi = corners.max(axis=1)
    # Candidate cells: triangle AABB padded by one cell so faces lying
    # exactly on cell boundaries reach both neighbors; the SAT test is exact.
    ilo = np.clip(np.floor((tlo - lo) / cs).astype(np.int64) - 1, 0, R - 1)
    ihi = np.clip(np.floor((thi - lo) / cs).astype(np.int64) + 1, 0, R - 1)
    for f in range(mesh.n_faces):
        rx = np.arange(ilo[f, 0], ihi[f, 0] + 1)
        ry = np.arange(ilo[f, 1], ihi[f, 1] + 1)
        rz = np.arange(ilo[f, 2], ihi[f, 2] + 1)
        gx, gy, gz = np.meshgrid(rx, ry, rz, indexing="ij")
        cells = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        already = occ[cells[:, 0], cells[:, 1], cells[:, 2]]
        cells = cells[~already]
        if len(cells) == 0:
            continue
        centers = lo + (cells + 0.5) * cs
        inside = _tri_box_overlap(centers, half, corners[f])
        m = cells[inside]
        occ[m[:, 0], m[:, 1], m[:, 2]] = True
    if dilation > 0:
        from scipy.ndimage import binary_dilation
        occ = binary_dilation(occ, iterations=dilation)
    return SparseVoxelOctree(lo=lo, hi=hi, depth=depth, occupancy=occ)
