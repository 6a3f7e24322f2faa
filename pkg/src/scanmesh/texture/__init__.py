from .ssim import ssim, ssim_with_grad
from .raster import (
    GeometryBuffers, RenderedBuffers, TextureAtlas, rasterize,
    rasterize_geometry, shade, shade_backward,
)
from .bake import BakeReport, bake_initial_texture
from .losses import loss_multiview, loss_photometric, warp_neighbor
from .finetune import FinetuneConfig, FinetuneReport, finetune_texture
from .seams import seam_discontinuity
from .io import load_atlas, save_atlas

__all__ = [
    "ssim", "ssim_with_grad",
    "GeometryBuffers", "RenderedBuffers", "TextureAtlas", "rasterize",
    "rasterize_geometry", "shade", "shade_backward",
    "BakeReport", "bake_initial_texture",
    "loss_multiview", "loss_photometric", "warp_neighbor",
    "FinetuneConfig", "FinetuneReport", "finetune_texture",
    "seam_discontinuity",
    "load_atlas", "save_atlas",
]
