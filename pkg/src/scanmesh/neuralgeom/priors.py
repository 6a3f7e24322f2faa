"""Dense geometric priors (depth + normal maps) and their binary file format.

File format: 16-byte header = 4-byte magic b"FGRD", then uint32 width,
height, channels (little-endian), followed by float32 row-major data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FGRD"


def write_float_grid(path: str, grid: np.ndarray):
    g = np.asarray(grid, dtype="<f4")
    if g.ndim == 2:
        g = g[:, :, None]
    h, w, c = g.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(np.ascontiguousarray(g).tobytes())


def read_float_grid(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad float-grid magic {magic!r}")
        w, h, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(w * h * c * 4), dtype="<f4")
    grid = data.reshape(h, w, c).astype(np.float64)
    return grid[:, :, 0] if c == 1 else grid


@dataclass
class PriorMaps:
    """Per-frame prior depth (meters, 0 invalid) and world-frame unit normals."""

    depths: dict[int, np.ndarray] = field(default_factory=dict)   # (H, W)
    normals: dict[int, np.ndarray] = field(default_factory=dict)  # (H, W, 3)

    def add(self, frame_id: int, depth: np.ndarray, normal: np.ndarray):
        depth = np.asarray(depth, dtype=np.float64)
        normal = np.asarray(normal, dtype=np.float64)
        if np.any(depth < 0):
            raise ValueError("prior depth must be >= 0")
        valid = depth > 0
        lens = np.linalg.norm(normal, axis=2)
        if valid.any() and not np.allclose(lens[valid], 1.0, atol=1e-6):
            raise ValueError("prior normals must be unit length where valid")
        self.depths[frame_id] = depth
        self.normals[frame_id] = normal

    def has(self, frame_id: int) -> bool:
        return frame_id in self.depths

    def lookup(self, frame_id: int, us: np.ndarray, vs: np.ndarray):
        """Depth/normal at integer pixels; returns (depth, normal, valid)."""
        d = self.depths[frame_id][vs, us]
        n = self.normals[frame_id][vs, us]
        valid = d > 0
        return d, n, valid
