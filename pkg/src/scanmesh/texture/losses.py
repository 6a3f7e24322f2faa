"""Photometric losses for texture fine-tuning.

loss_photometric blends mean L1 and SSIM:
    (1 - alpha) * L1 + (alpha / 2) * (1 - SSIM).

loss_multiview synthesizes the reference view by warping a neighbor frame
through the rendered depth, then applies the same blend over the validly
warped pixels.  By default the warped image is compared against the
captured reference image (a pure geometric-consistency measure); passing
the rendered image compares against it instead and returns the gradient
used to optimize texels.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..core import Frame, bilinear_sample_many, project_many, unproject_many
from ..errors import SizeMismatch
from .ssim import ssim_with_grad


def loss_photometric(rendered: np.ndarray, reference: np.ndarray,
                     alpha: float = 0.85):
    """Returns (value, drendered)."""
    r = np.asarray(rendered, dtype=np.float64)
    g = np.asarray(reference, dtype=np.float64)
    if r.shape != g.shape:
        raise SizeMismatch(f"{r.shape} vs {g.shape}")
    diff = r - g
    l1 = float(np.abs(diff).mean())
    dl1 = np.sign(diff) / diff.size
    s_val, ds = ssim_with_grad(r, g)
    value = (1 - alpha) * l1 + (alpha / 2) * (1 - s_val)
    grad = (1 - alpha) * dl1 - (alpha / 2) * ds
    return value, grad


def warp_neighbor(depth: np.ndarray, frame: Frame, neighbor: Frame,
                  neighbor_depth: np.ndarray | None = None,
                  occlusion_tol: float = 0.01):
    """Synthesizes the reference view from the neighbor's image through the
    rendered depth.  Returns (warped (H, W, 3), valid (H, W)).

    Pixels are invalid when the reference depth is missing, the warp lands
    outside the neighbor image, or (when neighbor_depth is given) the
    neighbor's rendered depth disagrees with the transformed depth by more
    than occlusion_tol relative.
    """
    H, W = depth.shape
    valid = depth > 0
    vs, us = np.nonzero(valid)
    warped = np.zeros((H, W, 3))
    if len(vs) == 0:
        return warped, np.zeros((H, W), dtype=bool)
    pix = np.stack([us.astype(np.float64), vs.astype(np.float64)], axis=1)
    world = unproject_many(frame.intrinsics, frame.pose, pix, depth[vs, us])
    q, z2, in_front = project_many(neighbor.intrinsics, neighbor.pose, world)
    vals, inside = bilinear_sample_many(neighbor.image, q)
    ok = in_front & inside
    if neighbor_depth is not None:
        dn, dn_in = bilinear_sample_many(neighbor_depth, q)
        ok &= dn_in & (dn > 0) & (np.abs(dn - z2) <= occlusion_tol * z2)
    warped[vs[ok], us[ok]] = vals[ok]
    out_valid = np.zeros((H, W), dtype=bool)
    out_valid[vs[ok], us[ok]] = True
    return warped, out_valid


def masked_blend_loss(image: np.ndarray, warped: np.ndarray,
                      valid: np.ndarray, alpha: float):
    """Eq.-7-form blend between an image and a partially valid warp.

    L1 runs over the valid pixels; for SSIM the invalid warp pixels are
    filled from the image itself so they contribute identical patches
    (no spurious structure penalty).  Returns (value, dimage).
    """
    diff = (image - warped)[valid]
    l1 = float(np.abs(diff).mean())
    filled = np.where(valid[:, :, None], warped, image)
    s_val, dimg, dfill = ssim_with_grad(image, filled, need_grad_b=True)
    value = (1 - alpha) * l1 + (alpha / 2) * (1 - s_val)
    grad = np.zeros_like(image)
    grad[valid] = (1 - alpha) * np.sign(diff) / diff.size
    grad += -(alpha / 2) * dimg
    grad += -(alpha / 2) * np.where(valid[:, :, None], 0.0, dfill)
    return value, grad


def loss_multiview(depth: np.ndarray, frame: Frame, neighbor: Frame,
                   alpha: float = 0.85, rendered: np.ndarray | None = None,
                   neighbor_depth: np.ndarray | None = None):
    """Multi-view photometric loss through depth-based reprojection.

    Default: compares the warp against the captured reference image and
    returns (value, None).  With rendered given: compares against the
    rendered image and returns (value, drendered) so the loss can drive
    texel optimization.
    """
    warped, valid = warp_neighbor(depth, frame, neighbor, neighbor_depth)
    if not valid.any():
        warnings.warn("no valid overlap between views; loss contribution 0")
        return (0.0, None) if rendered is None else (0.0, np.zeros_like(rendered))
    if rendered is None:
        value, _ = masked_blend_loss(np.asarray(frame.image, dtype=np.float64),
                                     warped, valid, alpha)
        return value, None
    return masked_blend_loss(np.asarray(rendered, dtype=np.float64), warped,
                             valid, alpha)
