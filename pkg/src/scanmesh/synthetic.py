"""Synthetic scene generation: analytic shapes rendered to posed RGB-D
frames with controllable noise, exact feature tracks, and ground truth.

Everything here is deterministic given the seed.  Outlier injection supports
two spatial patterns: "region" anchors the corruption to a patch of the
object surface (consistent across views, like a sensor-confusing material),
"iid" scatters it per pixel independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, Frame, Pose, pixel_rays, project_many
from .errors import InvalidSpec
from .mesh import TriangleMesh, box_mesh, icosphere, quad_grid_mesh
from .neuralgeom.priors import PriorMaps
from .sfm import Track


# ---------------------------------------------------------------------------
# Analytic shapes
# ---------------------------------------------------------------------------

class _Sphere:
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def sdf(self, pts):
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius

    def intersect(self, origins, dirs):
        oc = origins - self.center
        b = np.sum(oc * dirs, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius ** 2
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = -b - sq
        t2 = -b + sq
        t = np.where(t > 1e-9, t, t2)
        hit &= t > 1e-9
        return np.where(hit, t, np.inf), hit

    def normal(self, pts):
        n = pts - self.center
        return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-300)

    def surface_points(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v

    def visible(self, pts, cam_center):
        return np.sum(self.normal(pts) * (cam_center - pts), axis=1) > 1e-9

    def gt_mesh(self):
        return icosphere(self.radius, self.center, subdivisions=3)


class _Box:
    def __init__(self, center, half_extent):
        self.center = np.asarray(center, dtype=np.float64)
        self.half = np.asarray(half_extent, dtype=np.float64)

    def sdf(self, pts):
        q = np.abs(pts - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def intersect(self, origins, dirs):
        lo = self.center - self.half
        hi = self.center + self.half
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tmax >= tmin) & (tmax > 1e-9)
        t = np.where(tmin > 1e-9, tmin, tmax)
        hit &= t > 1e-9
        return np.where(hit, t, np.inf), hit

    def normal(self, pts):
        d = (pts - self.center) / self.half
        n = np.zeros_like(d)
        axis = np.argmax(np.abs(d), axis=-1)
        rows = np.arange(len(d))
        n[rows, axis] = np.sign(d[rows, axis])
        return n

    def surface_points(self, n, rng):
        areas = np.array([self.half[1] * self.half[2],
                          self.half[0] * self.half[2],
                          self.half[0] * self.half[1]]).repeat(2) * 4
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1, 1, size=(n, 2))
        pts = np.zeros((n, 3))
        for k in range(6):
            axis, sign = divmod(k, 2)
            sel = face == k
            others = [i for i in range(3) if i != axis]
            pts[sel, axis] = (1 if sign else -1) * self.half[axis]
            pts[sel, others[0]] = uv[sel, 0] * self.half[others[0]]
            pts[sel, others[1]] = uv[sel, 1] * self.half[others[1]]
        return pts + self.center

    def visible(self, pts, cam_center):
        return np.sum(self.normal(pts) * (cam_center - pts), axis=1) > 1e-9

    def gt_mesh(self):
        return box_mesh(self.center, self.half)


class _Quad:
    """Rectangle in the z = z0 plane facing -z (cameras on the -z side)."""

    def __init__(self, center, size, cells=(8, 8)):
        self.center = np.asarray(center, dtype=np.float64)
        self.size = np.asarray(size, dtype=np.float64)
        self.cells = cells

    def sdf(self, pts):
        return pts[..., 2] - self.center[2]

    def intersect(self, origins, dirs):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.center[2] - origins[:, 2]) / dz
        p = origins + t[:, None] * dirs
        hit = ((t > 1e-9) & np.isfinite(t)
               & (np.abs(p[:, 0] - self.center[0]) <= self.size[0] / 2)
               & (np.abs(p[:, 1] - self.center[1]) <= self.size[1] / 2))
        return np.where(hit, t, np.inf), hit

    def normal(self, pts):
        n = np.zeros_like(pts)
        n[..., 2] = -1.0
        return n

    def surface_points(self, n, rng):
        uv = rng.uniform(-0.5, 0.5, size=(n, 2)) * self.size
        pts = np.tile(self.center, (n, 1))
        pts[:, 0] += uv[:, 0]
        pts[:, 1] += uv[:, 1]
        return pts

    def visible(self, pts, cam_center):
        return np.full(len(pts), cam_center[2] < self.center[2])

    def gt_mesh(self):
        return quad_grid_mesh(self.center, tuple(self.size), self.cells)


class _Composite:
    def __init__(self, shapes):
        self.shapes = shapes

    def sdf(self, pts):
        return np.minimum.reduce([s.sdf(pts) for s in self.shapes])

    def intersect(self, origins, dirs):
        best_t = np.full(len(origins), np.inf)
        best_i = np.full(len(origins), -1)
        for i, s in enumerate(self.shapes):
            t, hit = s.intersect(origins, dirs)
            closer = hit & (t < best_t)
            best_t[closer] = t[closer]
            best_i[closer] = i
        return best_t, best_i >= 0

    def normal(self, pts):
        ds = np.stack([np.abs(s.sdf(pts)) for s in self.shapes])
        which = np.argmin(ds, axis=0)
        out = np.zeros_like(pts)
        for i, s in enumerate(self.shapes):
            sel = which == i
            if sel.any():
                out[sel] = s.normal(pts[sel])
        return out

    def surface_points(self, n, rng):
        per = [n // len(self.shapes)] * len(self.shapes)
        per[0] += n - sum(per)
        pts = np.concatenate([s.surface_points(k, rng)
                              for s, k in zip(self.shapes, per)])
        # Reject points hidden inside the union.
        keep = self.sdf(pts) > -1e-9
        return pts[keep]

    def visible(self, pts, cam_center):
        # Visible when the shape normal faces the camera and no other shape
        # occludes the segment camera->point.
        dirs = pts - cam_center
        dist = np.linalg.norm(dirs, axis=1)
        dirs = dirs / dist[:, None]
        origins = np.tile(cam_center, (len(pts), 1))
        t, hit = self.intersect(origins, dirs)
        return hit & (np.abs(t - dist) < 1e-6)

    def gt_mesh(self):
        meshes = [s.gt_mesh() for s in self.shapes]
        verts = np.concatenate([m.vertices for m in meshes])
        offs = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
        faces = np.concatenate([m.faces + o for m, o in zip(meshes, offs)])
        return TriangleMesh(verts, faces)


def _albedo(pts: np.ndarray, freq: float) -> np.ndarray:
    """Smooth procedural surface color in (0.08, 0.72) per channel."""
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    r = 0.4 + 0.3 * np.sin(freq * 2 * np.pi * x) * np.cos(freq * np.pi * z)
    g = 0.4 + 0.3 * np.sin(freq * 2 * np.pi * y + 1.3)
    b = 0.4 + 0.3 * np.cos(freq * 2 * np.pi * (x + y + z))
    return np.stack([r, g, b], axis=-1) * 0.8 + 0.08


def _checker_albedo(pts: np.ndarray, freq: float) -> np.ndarray:
    """High-frequency checker for texture-recovery scenarios."""
    x, y = pts[..., 0], pts[..., 1]
    cells = (np.floor(x * freq) + np.floor(y * freq)) % 2
    base = 0.2 + 0.5 * cells
    tint = 0.5 + 0.4 * np.sin(3.0 * np.pi * x) * np.cos(2.0 * np.pi * y)
    return np.stack([base, base * 0.85 + 0.05 * tint, 0.25 + 0.4 * tint],
                    axis=-1).clip(0.05, 0.82)


# ---------------------------------------------------------------------------
# Scene specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneNoise:
    depth_sigma: float = 0.0
    pose_rot_sigma: float = 0.0
    pose_trans_sigma: float = 0.0
    pixel_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_range: tuple[float, float] = (0.5, 2.0)
    outlier_pattern: str = "region"
    prior_depth_sigma: float = 0.0
    prior_normal_sigma: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "sphere"          # sphere | box | quad | two_tone_quad | composite
    views: int = 8
    image_size: tuple[int, int] = (64, 64)   # (W, H)
    depth_size: tuple[int, int] | None = None
    n_track_points: int = 200
    texture_freq: float = 1.5
    camera_distance: float = 2.0
    focal_multiplier: float = 0.9     # fx = multiplier * max(W, H)
    orbit_phase: float = 0.0          # rig rotation offset, radians
    ring_radius: float | None = None  # quad rigs: lateral spread of cameras
    quad_size: tuple[float, float] = (1.6, 1.6)
    quad_cells: tuple[int, int] = (8, 8)
    gains: tuple[float, ...] = (0.85, 1.15)  # two_tone_quad exposure gains
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    frames: list[Frame]                 # noisy frames (what the pipeline sees)
    gt_poses: list[Pose]
    gt_depths: list[np.ndarray]         # clean depth at depth resolution
    outlier_masks: list[np.ndarray]     # injected-outlier labels
    priors: PriorMaps
    tracks: list[Track]
    gt_points: np.ndarray
    gt_mesh: TriangleMesh
    view_gains: np.ndarray              # per-frame exposure gain
    shape: object = None

    def clean_valid_masks(self) -> list[np.ndarray]:
        return [d > 0 for d in self.gt_depths]


def _look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(z, up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose.from_matrix(R, -R @ eye)


def _orbit_poses(n: int, distance: float, target=(0, 0, 0),
                 phase: float = 0.0) -> list[Pose]:
    """Cameras on a sphere around the target: alternating elevation bands."""
    poses = []
    for i in range(n):
        az = 2 * np.pi * i / n + phase
        el = np.deg2rad(18.0 if i % 2 == 0 else -18.0)
        eye = np.array([
            distance * np.cos(el) * np.cos(az),
            distance * np.sin(el),
            distance * np.cos(el) * np.sin(az),
        ]) + np.asarray(target, dtype=np.float64)
        poses.append(_look_at(eye, target))
    return poses


def _front_ring_poses(n: int, ring_radius: float, standoff: float,
                      target=(0, 0, 0), phase: float = 0.0) -> list[Pose]:
    """Cameras in a tight ring at z = target_z - standoff, all looking at
    the target (quad scenes)."""
    t = np.asarray(target, dtype=np.float64)
    poses = []
    for i in range(n):
        az = 2 * np.pi * i / max(n, 1) + phase
        eye = t + np.array([ring_radius * np.cos(az),
                            ring_radius * np.sin(az),
                            -standoff])
        poses.append(_look_at(eye, t))
    return poses


def _build_shape(spec: SceneSpec):
    if spec.shape == "sphere":
        return _Sphere((0, 0, 0), 0.5)
    if spec.shape == "box":
        return _Box((0, 0, 0), (0.45, 0.35, 0.4))
    if spec.shape in ("quad", "two_tone_quad"):
        return _Quad((0, 0, 0), spec.quad_size, spec.quad_cells)
    if spec.shape == "composite":
        return _Composite([_Sphere((-0.3, 0, 0), 0.35),
                           _Box((0.35, 0, 0), (0.25, 0.3, 0.25))])
    raise InvalidSpec(f"unknown shape '{spec.shape}'")


def _spawn(rng: np.random.Generator) -> np.random.Generator:
    return np.random.default_rng(rng.integers(0, 2 ** 63 - 1))


def generate_synthetic_scene(spec: SceneSpec, noise: SceneNoise = SceneNoise(),
                             seed: int = 0) -> SyntheticScene:
    if spec.views < 2:
        raise InvalidSpec("need at least 2 views")
    rng = np.random.default_rng(seed)
    shape = _build_shape(spec)
    W, H = spec.image_size
    Wd, Hd = spec.depth_size or spec.image_size
    f = spec.focal_multiplier * max(W, H)
    intr = CameraIntrinsics(fx=f, fy=f, cx=(W - 1) / 2, cy=(H - 1) / 2,
                            width=W, height=H)
    fd = f * Wd / W
    intr_d = CameraIntrinsics(fx=fd, fy=fd * (Hd / H) / (Wd / W),
                              cx=(Wd - 1) / 2, cy=(Hd - 1) / 2,
                              width=Wd, height=Hd)

    if spec.shape in ("quad", "two_tone_quad"):
        ring = spec.ring_radius if spec.ring_radius is not None else 0.12
        gt_poses = _front_ring_poses(spec.views, ring, spec.camera_distance,
                                     phase=spec.orbit_phase)
    else:
        gt_poses = _orbit_poses(spec.views, spec.camera_distance,
                                phase=spec.orbit_phase)

    if spec.shape == "two_tone_quad":
        gains = np.array([spec.gains[i % len(spec.gains)]
                          for i in range(spec.views)])
    else:
        gains = np.ones(spec.views)
    albedo_fn = lambda p: _albedo(p, spec.texture_freq)

    # Outlier region anchored to the surface: a disk around a surface point.
    region_center = None
    region_radius = 0.0
    if noise.outlier_fraction > 0 and noise.outlier_pattern == "region":
        if spec.shape in ("quad", "two_tone_quad"):
            region_center = np.array([0.15, -0.1, 0.0])
            view_w = spec.camera_distance * Wd / fd
            view_h = spec.camera_distance * Hd / intr_d.fy
            region_radius = np.sqrt(noise.outlier_fraction * view_w * view_h
                                    / np.pi)
        else:
            region_center = shape.surface_points(1, _spawn(rng))[0]
            region_radius = np.sqrt(noise.outlier_fraction) * 0.8

    frames, gt_depths, outlier_masks = [], [], []
    priors = PriorMaps()
    prior_rng = _spawn(rng)
    noise_rng = _spawn(rng)

    for i, pose in enumerate(gt_poses):
        # Depth at depth resolution.
        uu, vv = np.meshgrid(np.arange(Wd, dtype=np.float64),
                             np.arange(Hd, dtype=np.float64))
        pix = np.stack([uu.ravel(), vv.ravel()], axis=1)
        o, d = pixel_rays(intr_d, pose, pix)
        t, hit = shape.intersect(o, d)
        pts = o + np.where(hit, t, 0.0)[:, None] * d
        z = pose.apply(pts)[:, 2]
        depth = np.where(hit, z, 0.0).reshape(Hd, Wd)
        gt_depths.append(depth.copy())

        # Color at color resolution.
        if (W, H) == (Wd, Hd):
            pts_c, hit_c = pts, hit
        else:
            uu2, vv2 = np.meshgrid(np.arange(W, dtype=np.float64),
                                   np.arange(H, dtype=np.float64))
            pix2 = np.stack([uu2.ravel(), vv2.ravel()], axis=1)
            o2, d2 = pixel_rays(intr, pose, pix2)
            t2, hit_c = shape.intersect(o2, d2)
            pts_c = o2 + np.where(hit_c, t2, 0.0)[:, None] * d2
        img = np.tile(np.asarray(spec.background, dtype=np.float64), (len(pts_c), 1))
        img[hit_c] = albedo_fn(pts_c[hit_c]) * gains[i]
        img = img.reshape(H, W, 3).clip(0.0, 1.0)

        # Priors at color resolution: clean geometry + optional noise.
        if (W, H) == (Wd, Hd):
            pz = pose.apply(pts_c)[:, 2]
            pd = np.where(hit_c, pz, 0.0).reshape(H, W)
        else:
            pd = np.where(hit_c, pose.apply(pts_c)[:, 2], 0.0).reshape(H, W)
        pn = np.zeros((H, W, 3))
        if hit_c.any():
            pn.reshape(-1, 3)[hit_c] = shape.normal(pts_c[hit_c])
        if noise.prior_depth_sigma > 0:
            pd = np.where(pd > 0,
                          np.maximum(pd + prior_rng.normal(0, noise.prior_depth_sigma, pd.shape), 1e-3),
                          0.0)
        if noise.prior_normal_sigma > 0:
            jitter = prior_rng.normal(0, noise.prior_normal_sigma, pn.shape)
            pn = pn + jitter
            lens = np.linalg.norm(pn, axis=2, keepdims=True)
            pn = np.where(pd[..., None] > 0, pn / np.maximum(lens, 1e-9), 0.0)
        priors.add(i, pd, pn)

        # Depth corruption.
        omask = np.zeros((Hd, Wd), dtype=bool)
        if noise.outlier_fraction > 0:
            if noise.outlier_pattern == "iid":
                omask = (noise_rng.random((Hd, Wd)) < noise.outlier_fraction) \
                    & (depth > 0)
            else:
                dist = np.linalg.norm(pts - region_center, axis=1).reshape(Hd, Wd)
                omask = (dist < region_radius) & (depth > 0)
            lo, hi = noise.outlier_range
            depth = depth.copy()
            depth[omask] = noise_rng.uniform(lo, hi, size=int(omask.sum()))
        if noise.depth_sigma > 0:
            clean = (depth > 0) & ~omask
            depth = depth.copy()
            depth[clean] = np.maximum(
                depth[clean] + noise_rng.normal(0, noise.depth_sigma, int(clean.sum())),
                1e-3)
        outlier_masks.append(omask)

        # Pose perturbation (what the pipeline receives as initial pose).
        noisy_pose = pose
        if noise.pose_rot_sigma > 0 or noise.pose_trans_sigma > 0:
            from .core import so3_exp
            w = noise_rng.normal(size=3)
            w = w / max(np.linalg.norm(w), 1e-12) * noise_rng.normal(0, noise.pose_rot_sigma)
            dt = noise_rng.normal(0, noise.pose_trans_sigma, size=3)
            noisy_pose = Pose.from_matrix(so3_exp(w) @ pose.R, pose.t + dt)

        conf = np.full((Hd, Wd), 2, dtype=np.int64)
        frames.append(Frame(image=img, depth=depth.astype(np.float32),
                            confidence=conf, intrinsics=intr,
                            depth_intrinsics=intr_d, pose=noisy_pose,
                            frame_id=i))

    # Tracks from known surface points, observed where visible.
    track_rng = _spawn(rng)
    pts3d = shape.surface_points(spec.n_track_points, track_rng)
    tracks = []
    for j, X in enumerate(pts3d):
        obs = []
        for i, pose in enumerate(gt_poses):
            if not shape.visible(X[None], pose.center())[0]:
                continue
            pixs, z, ok = project_many(intr, pose, X[None])
            if not ok[0] or not (0 <= pixs[0, 0] <= W - 1
                                 and 0 <= pixs[0, 1] <= H - 1):
                continue
            p = pixs[0]
            if noise.pixel_sigma > 0:
                p = p + track_rng.normal(0, noise.pixel_sigma, size=2)
            obs.append((i, p))
        if len(obs) >= 2:
            tracks.append(Track(point=X.copy(), observations=obs))
    kept = np.array([t.point for t in tracks]) if tracks else np.zeros((0, 3))

    return SyntheticScene(spec=spec, frames=frames, gt_poses=gt_poses,
                          gt_depths=gt_depths, outlier_masks=outlier_masks,
                          priors=priors, tracks=tracks, gt_points=kept,
                          gt_mesh=shape.gt_mesh(), view_gains=gains,
                          shape=shape)
