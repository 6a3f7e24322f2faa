"""Depth-map preprocessing: confidence/range filtering and multi-view
reprojection-consistency filtering.

A reference depth pixel survives the multi-view test when enough of the
neighboring source views agree with it: the pixel is unprojected to a world
point, projected into each source, and the source's measured depth at that
location is compared against the predicted depth.  Sources vote inlier when
the absolute difference is below ``epsilon``; a bilinear sample touching any
invalid (zero) source texel votes outlier.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Frame, unproject_many, project_many
from .errors import NoSources


@dataclass(frozen=True)
class FilterConfig:
    epsilon: float = 0.1          # depth agreement threshold, meters
    min_inlier_ratio: float = 0.8
    num_neighbors: int = 10
    max_depth: float = 2.55       # range cutoff, meters
    min_confidence: int = 1
    num_passes: int = 2

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not (0 < self.min_inlier_ratio <= 1):
            raise ValueError("min_inlier_ratio must be in (0, 1]")
        if self.num_neighbors < 1:
            raise ValueError("num_neighbors must be >= 1")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")


def single_view_filter(frame: Frame, cfg: FilterConfig) -> np.ndarray:
    """Boolean mask of depth pixels passing confidence and range tests."""
    return ((frame.confidence >= cfg.min_confidence)
            & (frame.depth > 0)
            & (frame.depth <= cfg.max_depth))


def _sample_depth_strict(depth: np.ndarray, pts: np.ndarray):
    """Bilinear depth lookup where any invalid support texel poisons the
    sample.  Points are accepted within the half-texel image border (pixel
    centers sit on the integer lattice, each texel spans +-0.5) and the
    interpolation is edge-clamped there.  Returns (values, ok) with ok False
    outside that border or when a support texel is zero."""
    H, W = depth.shape
    x, y = pts[:, 0], pts[:, 1]
    ok = (x >= -0.5) & (x <= W - 0.5) & (y >= -0.5) & (y <= H - 0.5)
    x = np.clip(x, 0.0, W - 1.0)
    y = np.clip(y, 0.0, H - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    d00, d01 = depth[y0, x0], depth[y0, x1]
    d10, d11 = depth[y1, x0], depth[y1, x1]
    ok &= (d00 > 0) & (d01 > 0) & (d10 > 0) & (d11 > 0)
    fx, fy = x - x0, y - y0
    val = ((1 - fy) * ((1 - fx) * d00 + fx * d01)
           + fy * ((1 - fx) * d10 + fx * d11))
    return val, ok


def select_neighbors(frames: list[Frame], ref_index: int, n: int) -> list[int]:
    """Indices of the n frames nearest the reference by camera-center
    distance; ties broken by frame_id."""
    ref_c = frames[ref_index].pose.center()
    order = []
    for i, f in enumerate(frames):
        if i == ref_index:
            continue
        d = float(np.linalg.norm(f.pose.center() - ref_c))
        order.append((d, f.frame_id, i))
    order.sort()
    return [i for _, _, i in order[:n]]


def multi_view_filter(reference: Frame, sources: list[Frame],
                      cfg: FilterConfig) -> np.ndarray:
    """Boolean mask of reference depth pixels consistent with the sources."""
    if not sources:
        raise NoSources("multi-view filter needs at least one source frame")
    depth = reference.depth
    H, W = depth.shape
    valid = depth > 0
    idx_v, idx_u = np.nonzero(valid)
    if len(idx_v) == 0:
        return np.zeros_like(valid)
    pix = np.stack([idx_u.astype(np.float64), idx_v.astype(np.float64)], axis=1)
    world = unproject_many(reference.depth_intrinsics, reference.pose,
                           pix, depth[idx_v, idx_u])
    votes = np.zeros(len(idx_v), dtype=np.int64)
    for src in sources:
        q, z, in_front = project_many(src.depth_intrinsics, src.pose, world)
        d_src, ok = _sample_depth_strict(src.depth, q)
        inlier = in_front & ok & (np.abs(d_src - z) < cfg.epsilon)
        votes += inlier
    mask = np.zeros_like(valid)
    mask[idx_v, idx_u] = votes >= cfg.min_inlier_ratio * len(sources)
    return mask


def filter_scene(frames: list[Frame], cfg: FilterConfig) -> list[Frame]:
    """Runs single-view then multi-view filtering num_passes times.

    Returns new frames with masked depths zeroed; inputs are not modified.
    """
    if len(frames) < 2:
        raise NoSources("filter_scene needs at least two frames")
    current = [replace(f, depth=f.depth.copy()) for f in frames]
    for _ in range(cfg.num_passes):
        depths = []
        for f in current:
            m = single_view_filter(f, cfg)
            depths.append(np.where(m, f.depth, 0.0).astype(np.float32))
        current = [replace(f, depth=d) for f, d in zip(current, depths)]
        masks = []
        for i, f in enumerate(current):
            nbrs = select_neighbors(current, i, cfg.num_neighbors)
            masks.append(multi_view_filter(f, [current[j] for j in nbrs], cfg))
        current = [replace(f, depth=np.where(m, f.depth, 0.0).astype(np.float32))
                   for f, m in zip(current, masks)]
    return current
