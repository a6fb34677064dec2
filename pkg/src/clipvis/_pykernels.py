"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Used when the extension is not built, or when ``CLIPVIS_BACKEND=python``.
Signatures and array layouts are identical to the compiled module.
"""

import numpy as np


def soft_iou_sums(a, b):
    prod = a * b
    inter = float(np.sum(prod))
    union = float(np.sum(a + b - prod))
    return inter, union


def soft_iou_mean(a, b):
    n = a.shape[0]
    if n == 0:
        raise ValueError("soft_iou_mean needs at least one frame")
    prod = a * b
    inter = prod.reshape(n, -1).sum(axis=1)
    union = (a + b - prod).reshape(n, -1).sum(axis=1)
    empty = union == 0.0
    ratio = np.divide(inter, union, out=np.ones_like(inter), where=~empty)
    return float(ratio.sum() / n)


def soft_iou_grad(a, b):
    inter, union = soft_iou_sums(a, b)
    return (b * union - inter * (1.0 - b)) / (union * union)


def im2col(x, k, dilation):
    c, h, w = x.shape
    half = k // 2
    pad = half * dilation
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, h, w), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            y0 = ky * dilation
            x0 = kx * dilation
            cols[:, ky, kx] = padded[:, y0 : y0 + h, x0 : x0 + w]
    return cols.reshape(c * k * k, h, w)


def deform_im2col(x, offsets, k, dilation):
    c, h, w = x.shape
    half = k // 2
    taps = k * k
    off = offsets.reshape(taps, 2, h, w)
    ky, kx = np.divmod(np.arange(taps), k)
    rows = np.arange(h)[None, :, None]
    cols_ = np.arange(w)[None, None, :]
    px = cols_ + ((kx - half) * dilation)[:, None, None] + off[:, 0]
    py = rows + ((ky - half) * dilation)[:, None, None] + off[:, 1]
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def gather(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = x[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside[None], vals, 0.0)

    # same summation order as the compiled kernel
    v = ((1.0 - fy) * (1.0 - fx))[None] * gather(y0, x0)
    v = v + ((1.0 - fy) * fx)[None] * gather(y0, x0 + 1)
    v = v + (fy * (1.0 - fx))[None] * gather(y0 + 1, x0)
    v = v + (fy * fx)[None] * gather(y0 + 1, x0 + 1)
    return np.ascontiguousarray(v.reshape(c * taps, h, w))
