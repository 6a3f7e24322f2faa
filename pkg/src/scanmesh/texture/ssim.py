"""Structural similarity with the standard 11x11 Gaussian window
(sigma 1.5, C1 = 0.01^2, C2 = 0.03^2), evaluated over windows that fit
entirely inside the image, plus the exact adjoint pass used for texture
optimization.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from ..errors import ImageTooSmall

WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _kernel():
    x = np.arange(WINDOW) - WINDOW // 2
    k = np.exp(-(x ** 2) / (2 * SIGMA ** 2))
    return k / k.sum()


_K = _kernel()
_PAD = WINDOW // 2


def _filt(img: np.ndarray) -> np.ndarray:
    """Valid-window Gaussian filtering of (H, W, C): output (H-10, W-10, C)."""
    out = correlate1d(img, _K, axis=0, mode="constant")
    out = correlate1d(out, _K, axis=1, mode="constant")
    return out[_PAD:-_PAD, _PAD:-_PAD]


def _filt_adjoint(up: np.ndarray, shape) -> np.ndarray:
    """Adjoint of _filt: zero-embed the valid-region upstream, then filter
    (the Gaussian kernel is symmetric)."""
    full = np.zeros(shape)
    full[_PAD:-_PAD, _PAD:-_PAD] = up
    out = correlate1d(full, _K, axis=0, mode="constant")
    out = correlate1d(out, _K, axis=1, mode="constant")
    return out


def _prep(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return a


def _stats(a: np.ndarray, b: np.ndarray):
    mu1 = _filt(a)
    mu2 = _filt(b)
    e11 = _filt(a * a)
    e22 = _filt(b * b)
    e12 = _filt(a * b)
    s1 = e11 - mu1 ** 2
    s2 = e22 - mu2 ** 2
    s12 = e12 - mu1 * mu2
    A1 = 2 * mu1 * mu2 + C1
    A2 = 2 * s12 + C2
    B1 = mu1 ** 2 + mu2 ** 2 + C1
    B2 = s1 + s2 + C2
    return mu1, mu2, A1, A2, B1, B2


def ssim(img_a, img_b) -> float:
    """Mean local SSIM of two equally sized [0, 1] images."""
    a, b = _prep(img_a), _prep(img_b)
    if a.shape != b.shape:
        from ..errors import SizeMismatch
        raise SizeMismatch(f"{a.shape} vs {b.shape}")
    if a.shape[0] < WINDOW or a.shape[1] < WINDOW:
        raise ImageTooSmall(f"need at least {WINDOW}x{WINDOW}")
    _, _, A1, A2, B1, B2 = _stats(a, b)
    return float(np.mean(A1 * A2 / (B1 * B2)))


def ssim_with_grad(img_a, img_b, need_grad_b: bool = False):
    """SSIM value plus d(ssim)/d(img_a) (and optionally w.r.t. img_b).

    Gradients are exact: the local statistics are differentiated through
    the Gaussian filtering adjoint.
    """
    a, b = _prep(img_a), _prep(img_b)
    if a.shape[0] < WINDOW or a.shape[1] < WINDOW:
        raise ImageTooSmall(f"need at least {WINDOW}x{WINDOW}")
    mu1, mu2, A1, A2, B1, B2 = _stats(a, b)
    S = A1 * A2 / (B1 * B2)
    value = float(np.mean(S))
    u = np.full(S.shape, 1.0 / S.size)

    dA1 = u * A2 / (B1 * B2)
    dA2 = u * A1 / (B1 * B2)
    dB1 = -u * S / B1
    dB2 = -u * S / B2
    # A2 = 2(E12 - mu1 mu2) + C2 ; B2 = E11 - mu1^2 + E22 - mu2^2 + C2
    dmu1 = dA1 * 2 * mu2 - dA2 * 2 * mu2 - dB2 * 2 * mu1 + dB1 * 2 * mu1
    dE11 = dB2
    dE12 = 2 * dA2
    shape = a.shape
    da = (_filt_adjoint(dmu1, shape)
          + _filt_adjoint(dE11, shape) * 2 * a
          + _filt_adjoint(dE12, shape) * b)
    if np.asarray(img_a).ndim == 2:
        da = da[:, :, 0]
    if not need_grad_b:
        return value, da
    dmu2 = dA1 * 2 * mu1 - dA2 * 2 * mu1 - dB2 * 2 * mu2 + dB1 * 2 * mu2
    dE22 = dB2
    db = (_filt_adjoint(dmu2, shape)
          + _filt_adjoint(dE22, shape) * 2 * b
          + _filt_adjoint(dE12, shape) * a)
    if np.asarray(img_b).ndim == 2:
        db = db[:, :, 0]
    return value, da, db
