from .metrics import chamfer_distance, hausdorff_distance, psnr, psnr_ssim_report

__all__ = ["chamfer_distance", "hausdorff_distance", "psnr",
           "psnr_ssim_report"]
