"""Compiled and numpy kernels must agree bit for bit."""

import numpy as np
import pytest

from clipvis import _pykernels, kernels

from conftest import BACKENDS

needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_cython
def test_backends_agree_exactly(rng):
    ck = BACKENDS["cython"]
    for _ in range(25):
        c, h, w = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 9)
        x = rng.normal(size=(c, h, w))
        for k in (1, 3, 5):
            d = int(rng.integers(1, 4))
            np.testing.assert_array_equal(ck.im2col(x, k, d), _pykernels.im2col(x, k, d))
            off = rng.normal(scale=2.0, size=(2 * k * k, h, w))
            np.testing.assert_array_equal(ck.deform_im2col(x, off, k, d), _pykernels.deform_im2col(x, off, k, d))
        a = rng.random((h, w))
        b = rng.random((h, w))
        assert ck.soft_iou_sums(a, b) == pytest.approx(_pykernels.soft_iou_sums(a, b), rel=1e-14)
        np.testing.assert_allclose(ck.soft_iou_grad(a, b), _pykernels.soft_iou_grad(a, b), rtol=1e-13)
        s = rng.random((3, h, w))
        t = rng.random((3, h, w))
        assert ck.soft_iou_mean(s, t) == pytest.approx(_pykernels.soft_iou_mean(s, t), rel=1e-14)


def test_deform_im2col_integer_offsets_are_shifts(backend):
    x = np.arange(12, dtype=float).reshape(1, 3, 4)
    off = np.zeros((2, 3, 4))
    off[0] = 1.0
    cols = kernels.deform_im2col(x, off, 1, 1)
    expected = np.zeros((1, 3, 4))
    expected[0, :, :3] = x[0, :, 1:]
    np.testing.assert_array_equal(cols, expected)


def test_soft_iou_mean_requires_frames(backend):
    with pytest.raises(ValueError):
        kernels.soft_iou_mean(np.zeros((0, 2, 2)), np.zeros((0, 2, 2)))
