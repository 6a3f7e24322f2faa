"""Geometry and imaging primitives: cameras, rigid poses, frames, rays, sampling.

Conventions used throughout the package:

* Poses are world->camera: ``x_cam = R @ x_world + t``.
* Pixel (u, v) samples the image at continuous coordinate (u, v) exactly,
  i.e. integer pixel centers sit on the integer lattice.  ``u`` indexes
  columns (x), ``v`` indexes rows (y); arrays are indexed ``img[v, u]``.
* Color images are linear floats in [0, 1]; depth is meters, 0 = invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, NonPositiveDepth, OutOfBounds


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # Canonical sign: w >= 0 keeps serialization round-trips stable.
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_normalize(q)


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential: axis-angle 3-vector -> rotation matrix."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = np.array([[0, -w[2], w[1]],
                  [w[2], 0, -w[0]],
                  [-w[1], w[0], 0]], dtype=np.float64)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> axis-angle 3-vector."""
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-10:
        return np.array([R[2, 1] - R[1, 2],
                         R[0, 2] - R[2, 0],
                         R[1, 0] - R[0, 1]]) * 0.5
    if np.pi - theta < 1e-6:
        # Near pi: extract the axis from the symmetric part.
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # Fix signs using off-diagonals.
        i = int(np.argmax(axis))
        if axis[i] > 0:
            for j in range(3):
                if j != i:
                    axis[j] = A[i, j] / axis[i] if abs(A[i, j]) > 1e-12 else axis[j]
        axis = axis / np.linalg.norm(axis)
        return axis * theta
    return np.array([R[2, 1] - R[1, 2],
                     R[0, 2] - R[2, 0],
                     R[1, 0] - R[0, 1]]) * (theta / (2.0 * np.sin(theta)))


# ---------------------------------------------------------------------------
# Core value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; fx, fy, cx, cy in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid world->camera transform stored as unit quaternion + translation."""

    q: np.ndarray  # (4,) unit quaternion, w first
    t: np.ndarray  # (3,) translation, meters

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(np.asarray(self.q, dtype=np.float64)))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3).copy())
        self.q.flags.writeable = False
        self.t.flags.writeable = False

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(R: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(matrix_to_quat(R), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """World -> camera coordinates. points: (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Camera -> world coordinates."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.t) @ self.R

    def compose(self, other: "Pose") -> "Pose":
        """Returns self o other (apply other first, then self)."""
        R1, R2 = self.R, other.R
        return Pose.from_matrix(R1 @ R2, R1 @ other.t + self.t)

    def inverse(self) -> "Pose":
        R = self.R
        return Pose.from_matrix(R.T, -R.T @ self.t)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t


@dataclass
class Frame:
    """One posed capture: color image, depth map, confidence map."""

    image: np.ndarray          # (H, W, 3) float in [0, 1]
    depth: np.ndarray          # (Hd, Wd) float meters, 0 = invalid
    confidence: np.ndarray     # (Hd, Wd) int in {0, 1, 2}
    intrinsics: CameraIntrinsics        # for the color image
    depth_intrinsics: CameraIntrinsics  # for the depth/confidence grids
    pose: Pose
    frame_id: int = 0

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.confidence = np.asarray(self.confidence, dtype=np.int64)
        if self.depth.shape != self.confidence.shape:
            raise ValueError("depth and confidence grids must match in size")
        if np.any(self.depth < 0):
            raise ValueError("depth values must be >= 0")
        if not np.isin(self.confidence, (0, 1, 2)).all():
            raise ValueError("confidence values must be in {0, 1, 2}")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            d = d / n
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


# ---------------------------------------------------------------------------
# Projection operations
# ---------------------------------------------------------------------------

def project(intrinsics: CameraIntrinsics, pose: Pose, point: np.ndarray):
    """Project a world point; returns ((u, v), camera-space z).

    Raises BehindCamera when the point maps to z <= 0.
    """
    pc = pose.apply(np.asarray(point, dtype=np.float64).reshape(3))
    z = pc[2]
    if z <= 0:
        raise BehindCamera(f"point projects to z={z}")
    u = intrinsics.fx * pc[0] / z + intrinsics.cx
    v = intrinsics.fy * pc[1] / z + intrinsics.cy
    return np.array([u, v]), float(z)


def project_many(intrinsics: CameraIntrinsics, pose: Pose, points: np.ndarray):
    """Vectorized projection without the cheirality exception.

    Returns (pix (N,2), z (N,), valid (N,)) where valid = z > 0.
    """
    pc = pose.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = pc[:, 2]
    valid = z > 0
    zsafe = np.where(valid, z, 1.0)
    u = intrinsics.fx * pc[:, 0] / zsafe + intrinsics.cx
    v = intrinsics.fy * pc[:, 1] / zsafe + intrinsics.cy
    return np.stack([u, v], axis=1), z, valid


def unproject(intrinsics: CameraIntrinsics, pose: Pose, pixel: np.ndarray,
              depth: float) -> np.ndarray:
    """Lift a pixel at the given camera-space depth back to a world point."""
    if depth <= 0:
        raise NonPositiveDepth(f"depth={depth}")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    x = (u - intrinsics.cx) / intrinsics.fx * depth
    y = (v - intrinsics.cy) / intrinsics.fy * depth
    return pose.apply_inverse(np.array([x, y, depth]))


def unproject_many(intrinsics: CameraIntrinsics, pose: Pose, pixels: np.ndarray,
                   depths: np.ndarray) -> np.ndarray:
    """Vectorized unprojection; caller guarantees depths > 0."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    x = (px[:, 0] - intrinsics.cx) / intrinsics.fx * d
    y = (px[:, 1] - intrinsics.cy) / intrinsics.fy * d
    return pose.apply_inverse(np.stack([x, y, d], axis=1))


def pixel_rays(intrinsics: CameraIntrinsics, pose: Pose, pixels: np.ndarray):
    """World-space rays through the given pixels (counted in color pixels).

    Returns (origins (N,3), unit directions (N,3)).
    """
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d_cam = np.stack([(px[:, 0] - intrinsics.cx) / intrinsics.fx,
                      (px[:, 1] - intrinsics.cy) / intrinsics.fy,
                      np.ones(len(px))], axis=1)
    d_world = d_cam @ pose.R  # R^T applied to rows
    d_world = d_world / np.linalg.norm(d_world, axis=1, keepdims=True)
    origin = pose.center()
    return np.broadcast_to(origin, d_world.shape).copy(), d_world


# ---------------------------------------------------------------------------
# Bilinear sampling
# ---------------------------------------------------------------------------

def bilinear_sample(grid: np.ndarray, point: np.ndarray,
                    clamp: bool = False) -> np.ndarray:
    """Bilinear interpolation of an (H, W) or (H, W, C) grid at (x, y).

    Integer-centered convention: point (i, j) returns grid[j, i] exactly.
    Out-of-domain points raise OutOfBounds unless clamp=True.
    """
    g = np.asarray(grid, dtype=np.float64)
    x, y = float(point[0]), float(point[1])
    H, W = g.shape[:2]
    if clamp:
        x = min(max(x, 0.0), W - 1.0)
        y = min(max(y, 0.0), H - 1.0)
    elif not (0.0 <= x <= W - 1 and 0.0 <= y <= H - 1):
        raise OutOfBounds(f"point ({x}, {y}) outside [0,{W-1}]x[0,{H-1}]")
    x0 = min(int(np.floor(x)), W - 2) if W > 1 else 0
    y0 = min(int(np.floor(y)), H - 2) if H > 1 else 0
    fx, fy = x - x0, y - y0
    v00 = g[y0, x0]
    v01 = g[y0, min(x0 + 1, W - 1)]
    v10 = g[min(y0 + 1, H - 1), x0]
    v11 = g[min(y0 + 1, H - 1), min(x0 + 1, W - 1)]
    return ((1 - fy) * ((1 - fx) * v00 + fx * v01)
            + fy * ((1 - fx) * v10 + fx * v11))


def bilinear_sample_many(grid: np.ndarray, points: np.ndarray):
    """Vectorized bilinear sampling; points clamped to the grid.

    Returns (values (N,) or (N, C), inside mask (N,)).
    """
    g = np.asarray(grid, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    H, W = g.shape[:2]
    x, y = pts[:, 0], pts[:, 1]
    inside = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    x = np.clip(x, 0.0, W - 1.0)
    y = np.clip(y, 0.0, H - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx, fy = x - x0, y - y0
    if g.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    out = ((1 - fy) * ((1 - fx) * g[y0, x0] + fx * g[y0, x1])
           + fy * ((1 - fx) * g[y1, x0] + fx * g[y1, x1]))
    return out, inside
