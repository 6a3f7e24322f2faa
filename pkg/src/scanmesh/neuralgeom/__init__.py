from .fields import AnalyticSDF, FieldBase, GridField, MlpField, sphere_sdf
from .losses import loss_color, loss_eikonal, loss_reg
from .octree import SparseVoxelOctree, build_sparse_voxels
from .priors import PriorMaps, read_float_grid, write_float_grid
from .render import (RenderConfig, render_backward, render_ray, render_rays,
                     sdf_alpha)
from .train import StageConfig, TrainState, train_stage1, train_stage2

__all__ = [
    "AnalyticSDF", "FieldBase", "GridField", "MlpField", "sphere_sdf",
    "loss_color", "loss_eikonal", "loss_reg",
    "SparseVoxelOctree", "build_sparse_voxels",
    "PriorMaps", "read_float_grid", "write_float_grid",
    "RenderConfig", "render_backward", "render_ray", "render_rays",
    "sdf_alpha",
    "StageConfig", "TrainState", "train_stage1", "train_stage2",
]
