"""The numba kernels and their numpy fallbacks must agree exactly."""
import os
import subprocess
import sys

import numpy as np
import pytest

from vseg import kernels
from vseg._accel import HAVE_NUMBA

pytestmark = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(1, 1, 3, 3), (2, 3, 5, 4), (4, 8, 14, 14)])
def test_im2col_col2im_agree(shape, dtype, rng):
    B, C, H, W = shape
    xp = np.pad(rng.normal(size=shape).astype(dtype), ((0, 0), (0, 0), (1, 1), (1, 1)))
    a, b = kernels.im2col3x3_np(xp), kernels.im2col3x3_nb(xp)
    assert a.dtype == b.dtype == dtype
    np.testing.assert_array_equal(a, b)
    g = rng.normal(size=a.shape).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(kernels.col2im3x3_np(g, B, H, W), kernels.col2im3x3_nb(g, B, H, W),
                               rtol=tol, atol=tol)


def test_col2im_is_adjoint_of_im2col(rng):
    # <im2col(x), g> == <x, col2im(g)> on the interior
    B, C, H, W = 2, 3, 4, 5
    x = rng.normal(size=(B, C, H, W))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    g = rng.normal(size=(B * H * W, C * 9))
    lhs = (kernels.im2col3x3(xp) * g).sum()
    rhs = (x * kernels.col2im3x3(g, B, H, W)).sum()
    assert abs(lhs - rhs) < 1e-10


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_maxpool_agree(dtype, rng):
    x = rng.normal(size=(3, 4, 6, 8)).astype(dtype)
    x[0, 0, :2, :2] = 1.0  # a tied window
    o1, a1 = kernels.maxpool2x2_forward_np(x)
    o2, a2 = kernels.maxpool2x2_forward_nb(x)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    assert a1[0, 0, 0, 0] == 0
    g = rng.normal(size=o1.shape).astype(dtype)
    np.testing.assert_array_equal(kernels.maxpool2x2_backward_np(g, a1), kernels.maxpool2x2_backward_nb(g, a1))


def test_clahe_interpolate_agree(rng):
    img = rng.integers(0, 256, size=(37, 53)).astype(np.uint8)
    luts = np.sort(rng.integers(0, 256, size=(3, 4, 256)), axis=-1).astype(np.float64)
    cy = np.array([5.5, 18.0, 30.5])
    cx = np.array([6.0, 19.5, 32.0, 46.0])
    np.testing.assert_array_equal(kernels.clahe_interpolate_np(img, luts, cy, cx),
                                  kernels.clahe_interpolate_nb(img, luts, cy, cx))


def test_stitch_agree(rng):
    preds = rng.random(size=(6, 28, 28))
    oy = np.array([0, 0, 7, 7, 12, 12])
    ox = np.array([0, 9, 0, 9, 0, 9])
    acc1, cnt1 = np.zeros((40, 37)), np.zeros((40, 37), dtype=np.int64)
    acc2, cnt2 = acc1.copy(), cnt1.copy()
    kernels.stitch_accumulate_np(acc1, cnt1, preds, oy, ox)
    kernels.stitch_accumulate_nb(acc2, cnt2, preds, oy, ox)
    np.testing.assert_array_equal(cnt1, cnt2)
    np.testing.assert_allclose(acc1, acc2, rtol=0, atol=1e-12)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, VSEG_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from vseg import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["VSEG_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", "from vseg import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"
