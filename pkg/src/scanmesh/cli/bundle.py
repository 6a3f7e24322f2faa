"""Scene bundle disk format.

Layout:
    frames/NNNN.png    8-bit color
    depth/NNNN.bin     float32 grid (FGRD header, little-endian)
    conf/NNNN.png      8-bit, values in {0, 1, 2}
    poses.txt          one line per frame: id qw qx qy qz tx ty tz
    intrinsics.txt     "color fx fy cx cy W H" and "depth fx fy cx cy W H"
    priors/            optional NNNN.depth.bin / NNNN.normal.bin
    tracks.txt         optional: track_id n i1 u1 v1 i2 u2 v2 ...
    gt/                optional ground truth (mesh.ply, poses.txt)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..core import CameraIntrinsics, Frame, Pose
from ..mesh import TriangleMesh, load_ply, save_ply
from ..neuralgeom.priors import PriorMaps, read_float_grid, write_float_grid
from ..sfm import Track


def _write_image(path: str, img: np.ndarray):
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _read_image(path: str) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


@dataclass
class SceneBundle:
    frames: list[Frame]
    priors: PriorMaps | None = None
    tracks: list[Track] = field(default_factory=list)
    gt_mesh: TriangleMesh | None = None
    gt_poses: list[Pose] | None = None


def write_bundle(directory: str, frames: list[Frame],
                 priors: PriorMaps | None = None,
                 tracks: list[Track] | None = None,
                 gt_mesh: TriangleMesh | None = None,
                 gt_poses: list[Pose] | None = None):
    os.makedirs(directory, exist_ok=True)
    for sub in ("frames", "depth", "conf"):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)
    pose_lines = []
    for f in frames:
        name = f"{f.frame_id:04d}"
        _write_image(os.path.join(directory, "frames", name + ".png"), f.image)
        write_float_grid(os.path.join(directory, "depth", name + ".bin"),
                         f.depth)
        Image.fromarray(f.confidence.astype(np.uint8)).save(
            os.path.join(directory, "conf", name + ".png"))
        q, t = f.pose.q, f.pose.t
        pose_lines.append(
            f"{f.frame_id} " + " ".join(f"{x:.17g}" for x in (*q, *t)))
    with open(os.path.join(directory, "poses.txt"), "w") as fh:
        fh.write("\n".join(pose_lines) + "\n")
    ic = frames[0].intrinsics
    idp = frames[0].depth_intrinsics
    with open(os.path.join(directory, "intrinsics.txt"), "w") as fh:
        fh.write(f"color {ic.fx:.17g} {ic.fy:.17g} {ic.cx:.17g} "
                 f"{ic.cy:.17g} {ic.width} {ic.height}\n")
        fh.write(f"depth {idp.fx:.17g} {idp.fy:.17g} {idp.cx:.17g} "
                 f"{idp.cy:.17g} {idp.width} {idp.height}\n")
    if priors is not None:
        pdir = os.path.join(directory, "priors")
        os.makedirs(pdir, exist_ok=True)
        for fid in sorted(priors.depths):
            write_float_grid(os.path.join(pdir, f"{fid:04d}.depth.bin"),
                             priors.depths[fid])
            write_float_grid(os.path.join(pdir, f"{fid:04d}.normal.bin"),
                             priors.normals[fid])
    if tracks:
        lines = []
        for tid, tr in enumerate(tracks):
            obs = " ".join(f"{i} {p[0]:.17g} {p[1]:.17g}"
                           for i, p in tr.observations)
            lines.append(f"{tid} {len(tr.observations)} {obs}")
        with open(os.path.join(directory, "tracks.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    if gt_mesh is not None or gt_poses is not None:
        gdir = os.path.join(directory, "gt")
        os.makedirs(gdir, exist_ok=True)
        if gt_mesh is not None:
            save_ply(gt_mesh, os.path.join(gdir, "mesh.ply"))
        if gt_poses is not None:
            lines = [f"{i} " + " ".join(f"{x:.17g}" for x in (*p.q, *p.t))
                     for i, p in enumerate(gt_poses)]
            with open(os.path.join(gdir, "poses.txt"), "w") as fh:
                fh.write("\n".join(lines) + "\n")


def _parse_intrinsics(path: str):
    out = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            kind, fx, fy, cx, cy, w, h = parts
            out[kind] = CameraIntrinsics(fx=float(fx), fy=float(fy),
                                         cx=float(cx), cy=float(cy),
                                         width=int(w), height=int(h))
    return out


def read_poses(path: str) -> dict[int, Pose]:
    poses = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            fid = int(parts[0])
            vals = [float(x) for x in parts[1:8]]
            q = np.array(vals[:4])
            if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                raise ValueError(f"pose quaternion for frame {fid} not unit")
            poses[fid] = Pose(q, np.array(vals[4:7]))
    return poses


def read_bundle(directory: str) -> SceneBundle:
    intr = _parse_intrinsics(os.path.join(directory, "intrinsics.txt"))
    poses = read_poses(os.path.join(directory, "poses.txt"))
    frames = []
    for fid in sorted(poses):
        name = f"{fid:04d}"
        img = _read_image(os.path.join(directory, "frames", name + ".png"))
        depth = read_float_grid(os.path.join(directory, "depth",
                                             name + ".bin"))
        conf = np.asarray(Image.open(os.path.join(directory, "conf",
                                                  name + ".png")),
                          dtype=np.int64)
        frames.append(Frame(image=img, depth=depth.astype(np.float32),
                            confidence=conf, intrinsics=intr["color"],
                            depth_intrinsics=intr["depth"], pose=poses[fid],
                            frame_id=fid))
    priors = None
    pdir = os.path.join(directory, "priors")
    if os.path.isdir(pdir):
        priors = PriorMaps()
        for fname in sorted(os.listdir(pdir)):
            if fname.endswith(".depth.bin"):
                fid = int(fname.split(".")[0])
                d = read_float_grid(os.path.join(pdir, fname))
                n = read_float_grid(os.path.join(
                    pdir, f"{fid:04d}.normal.bin"))
                priors.add(fid, d, n)
    tracks = []
    tpath = os.path.join(directory, "tracks.txt")
    if os.path.exists(tpath):
        with open(tpath) as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                n = int(parts[1])
                obs = []
                for k in range(n):
                    i = int(parts[2 + 3 * k])
                    u = float(parts[3 + 3 * k])
                    v = float(parts[4 + 3 * k])
                    obs.append((i, np.array([u, v])))
                if len(obs) >= 2:
                    tracks.append(Track(point=np.zeros(3), observations=obs))
    gt_mesh = None
    gt_poses = None
    gdir = os.path.join(directory, "gt")
    if os.path.isdir(gdir):
        mpath = os.path.join(gdir, "mesh.ply")
        if os.path.exists(mpath):
            gt_mesh = load_ply(mpath)
        ppath = os.path.join(gdir, "poses.txt")
        if os.path.exists(ppath):
            gp = read_poses(ppath)
            gt_poses = [gp[i] for i in sorted(gp)]
    return SceneBundle(frames=frames, priors=priors, tracks=tracks,
                       gt_mesh=gt_mesh, gt_poses=gt_poses)
