"""Training losses for the SDF/color fields.

Each loss returns the raw sum over its sample set together with the
upstream gradients needed by the field backward passes.  The training loop
rescales sums to per-sample means so term balance does not depend on batch
size.
"""

from __future__ import annotations

import numpy as np


def loss_color(rendered: np.ndarray, targets: np.ndarray):
    """L1 color loss summed over rays and channels.

    Returns (value, drendered).
    """
    r = np.asarray(rendered, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    diff = r - t
    return float(np.abs(diff).sum()), np.sign(diff)


def loss_eikonal(grads: np.ndarray):
    """Sum of (||grad f|| - 1)^2 over sample points.

    Returns (value, dgrads) with dgrads shaped like grads.
    """
    g = np.asarray(grads, dtype=np.float64).reshape(-1, 3)
    norms = np.linalg.norm(g, axis=1)
    err = norms - 1.0
    value = float(np.sum(err ** 2))
    safe = np.maximum(norms, 1e-12)
    dg = (2.0 * err / safe)[:, None] * g
    return value, dg


def loss_reg(sdf_vals: np.ndarray, sdf_grads: np.ndarray,
             prior_normals: np.ndarray, w_d: float, w_n: float):
    """Prior-geometry regularizer summed over pixels:
    w_d * |f(X)| + w_n * (1 - <normalize(grad f(X)), N>).

    The SDF gradient is L2-normalized (floor 1e-8) before the inner
    product.  Returns (value, dvals, dgrads).
    """
    f = np.asarray(sdf_vals, dtype=np.float64).reshape(-1)
    g = np.asarray(sdf_grads, dtype=np.float64).reshape(-1, 3)
    N = np.asarray(prior_normals, dtype=np.float64).reshape(-1, 3)
    norms = np.maximum(np.linalg.norm(g, axis=1), 1e-8)
    ghat = g / norms[:, None]
    inner = np.einsum("ij,ij->i", ghat, N)
    value = float(w_d * np.abs(f).sum() + w_n * np.sum(1.0 - inner))
    dvals = w_d * np.sign(f)
    # d<g/|g|, N>/dg = (N - ghat <ghat, N>) / |g|
    dgrads = -w_n * (N - ghat * inner[:, None]) / norms[:, None]
    return value, dvals, dgrads
