"""Triangle mesh container plus OBJ/PLY import and export.

UVs are stored per corner (one (u, v) pair per face corner) so each face can
live in its own texture chart.  ``face_chart`` maps each face to the chart it
was packed into; both are absent (None) until an atlas is built.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class TriangleMesh:
    vertices: np.ndarray                    # (V, 3) float64
    faces: np.ndarray                       # (F, 3) int64
    corner_uvs: np.ndarray | None = None    # (F, 3, 2) float64 in [0, 1]
    face_chart: np.ndarray | None = None    # (F,) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_corners(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        c = self.face_corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if normalize:
            lens = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.maximum(lens, 1e-300)
        return n

    def face_areas(self) -> np.ndarray:
        c = self.face_corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)

    def face_centroids(self) -> np.ndarray:
        return self.face_corners().mean(axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def edges(self) -> np.ndarray:
        """Unique undirected edges, (E, 2) with e[0] < e[1]."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_faces

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n points drawn uniformly by area over the surface."""
        areas = self.face_areas()
        total = areas.sum()
        if total <= 0:
            raise ValueError("mesh has zero total area")
        fi = rng.choice(len(areas), size=n, p=areas / total)
        u = rng.random(n)
        v = rng.random(n)
        flip = u + v > 1
        u[flip] = 1 - u[flip]
        v[flip] = 1 - v[flip]
        c = self.vertices[self.faces[fi]]
        return (c[:, 0] * (1 - u - v)[:, None]
                + c[:, 1] * u[:, None]
                + c[:, 2] * v[:, None])

    def transformed(self, R: np.ndarray, t: np.ndarray,
                    scale: float = 1.0) -> "TriangleMesh":
        v = scale * (self.vertices @ np.asarray(R).T) + np.asarray(t)
        return TriangleMesh(v, self.faces.copy(),
                            None if self.corner_uvs is None else self.corner_uvs.copy(),
                            None if self.face_chart is None else self.face_chart.copy())


# ---------------------------------------------------------------------------
# OBJ / MTL / PLY
# ---------------------------------------------------------------------------

def save_obj(mesh: TriangleMesh, path: str, texture_png: str | None = None):
    """Writes OBJ; with UVs present also writes a sidecar MTL referencing
    texture_png (required in that case)."""
    import os
    base = os.path.splitext(os.path.basename(path))[0]
    lines = []
    if mesh.corner_uvs is not None:
        if texture_png is None:
            raise ValueError("textured OBJ export needs a texture image path")
        mtl_path = os.path.join(os.path.dirname(path), base + ".mtl")
        with open(mtl_path, "w") as f:
            f.write("newmtl atlas\n")
            f.write("Ka 1.0 1.0 1.0\nKd 1.0 1.0 1.0\nKs 0.0 0.0 0.0\n")
            f.write("illum 1\n")
            f.write(f"map_Kd {os.path.basename(texture_png)}\n")
        lines.append(f"mtllib {base}.mtl")
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    if mesh.corner_uvs is not None:
        for fuv in mesh.corner_uvs:
            for uv in fuv:
                lines.append(f"vt {uv[0]:.9g} {uv[1]:.9g}")
        lines.append("usemtl atlas")
        for i, f in enumerate(mesh.faces):
            t = 3 * i
            lines.append("f " + " ".join(
                f"{f[k] + 1}/{t + k + 1}" for k in range(3)))
    else:
        for f in mesh.faces:
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path: str) -> TriangleMesh:
    verts, uvs, faces, face_uv_idx = [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                vi, ti = [], []
                for tok in parts[1:4]:
                    sub = tok.split("/")
                    vi.append(int(sub[0]) - 1)
                    if len(sub) > 1 and sub[1]:
                        ti.append(int(sub[1]) - 1)
                faces.append(vi)
                if len(ti) == 3:
                    face_uv_idx.append(ti)
    mesh = TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))
    if face_uv_idx and len(face_uv_idx) == len(faces):
        uv = np.array(uvs)
        mesh.corner_uvs = uv[np.array(face_uv_idx, dtype=np.int64)]
    return mesh


def save_ply(mesh: TriangleMesh, path: str):
    """Binary little-endian PLY, positions and faces only."""
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(mesh.vertices.astype("<f4").tobytes())
        for face in mesh.faces:
            f.write(struct.pack("<B3i", 3, *face))


def load_ply(path: str) -> TriangleMesh:
    with open(path, "rb") as f:
        data = f.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    nv = nf = 0
    for line in header:
        if line.startswith("element vertex"):
            nv = int(line.split()[-1])
        elif line.startswith("element face"):
            nf = int(line.split()[-1])
    body = data[end:]
    verts = np.frombuffer(body, dtype="<f4", count=nv * 3).reshape(nv, 3)
    off = nv * 12
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        n = body[off]
        assert n == 3, "only triangle PLY supported"
        faces[i] = struct.unpack_from("<3i", body, off + 1)
        off += 1 + 12
    return TriangleMesh(verts.astype(np.float64), faces)
