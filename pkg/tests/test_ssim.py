"""SSIM tests: closed-form constants, symmetry, and gradient checks."""

import numpy as np
import pytest

from scanmesh.errors import ImageTooSmall
from scanmesh.texture.ssim import C1, ssim, ssim_with_grad


class TestSsimValues:
    def test_identity_is_one(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 1, (24, 24, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_black_vs_white_closed_form(self):
        # Constant images 0 and 1: all variances vanish, so
        # SSIM = (C1 * C2) / ((1 + C1) * C2) = C1 / (1 + C1).
        black = np.zeros((16, 16))
        white = np.ones((16, 16))
        expected = C1 / (1.0 + C1)
        assert ssim(black, white) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(1.0e-4, rel=2e-2)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 1, (20, 20, 3))
        b = rng.uniform(0, 1, (20, 20, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_noise_strictly_below_one(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0.2, 0.8, (20, 20))
        b = a + 1e-3 * rng.normal(size=a.shape)
        assert ssim(a, b) < 1.0

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = rng.uniform(0, 1, (16, 16))
            b = rng.uniform(0, 1, (16, 16))
            v = ssim(a, b)
            assert -1.0 < v <= 1.0

    def test_too_small_raises(self):
        with pytest.raises(ImageTooSmall):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestSsimGrad:
    def test_grad_matches_fd(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(0.2, 0.8, (14, 14))
        b = rng.uniform(0.2, 0.8, (14, 14))
        _, da = ssim_with_grad(a, b)
        h = 1e-6
        fd = np.zeros_like(a)
        for i in range(14):
            for j in range(14):
                ap, am = a.copy(), a.copy()
                ap[i, j] += h
                am[i, j] -= h
                fd[i, j] = (ssim(ap, b) - ssim(am, b)) / (2 * h)
        rel = np.abs(da - fd) / np.maximum(np.abs(fd), 1e-5)
        assert rel.max() < 1e-3

    def test_grad_b_matches_fd(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0.2, 0.8, (13, 13))
        b = rng.uniform(0.2, 0.8, (13, 13))
        _, _, db = ssim_with_grad(a, b, need_grad_b=True)
        h = 1e-6
        fd = np.zeros_like(b)
        for i in range(13):
            for j in range(13):
                bp, bm = b.copy(), b.copy()
                bp[i, j] += h
                bm[i, j] -= h
                fd[i, j] = (ssim(a, bp) - ssim(a, bm)) / (2 * h)
        rel = np.abs(db - fd) / np.maximum(np.abs(fd), 1e-5)
        assert rel.max() < 1e-3
