from .tri import TriangleMesh, load_obj, load_ply, save_obj, save_ply
from .primitives import box_mesh, icosphere, quad_grid_mesh
from .marching import marching_cubes
from .simplify import SimplifyConfig, SimplifyResult, quadric_simplify
from .atlas import AtlasLayout, build_uv_atlas

__all__ = [
    "TriangleMesh", "load_obj", "load_ply", "save_obj", "save_ply",
    "box_mesh", "icosphere", "quad_grid_mesh",
    "marching_cubes",
    "SimplifyConfig", "SimplifyResult", "quadric_simplify",
    "AtlasLayout", "build_uv_atlas",
]
