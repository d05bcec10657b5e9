"""Pure-numpy 2-D convolution kernels (im2col + BLAS matmul).

Fallback backend for the compiled Cython kernels.  All arrays are NHWC,
float64, C-contiguous; weights are (kh, kw, c_in, c_out).
"""

import numpy as np


def _im2col(x, kh, kw, stride, pad):
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, ho, wo, kh, kw, c),
        strides=(s0, s1 * stride, s2 * stride, s1, s2, s3),
        writeable=False,
    )
    return cols, ho, wo


def conv2d_forward(x, w, b, stride=1, pad=0):
    kh, kw, c_in, c_out = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    n = x.shape[0]
    flat = cols.reshape(n * ho * wo, kh * kw * c_in)
    y = flat @ w.reshape(kh * kw * c_in, c_out) + b
    return np.ascontiguousarray(y.reshape(n, ho, wo, c_out))


def conv2d_backward_params(x, dy, kh, kw, stride=1, pad=0):
    n, ho, wo, c_out = dy.shape
    cols, ho2, wo2 = _im2col(x, kh, kw, stride, pad)
    assert (ho, wo) == (ho2, wo2)
    flat = cols.reshape(n * ho * wo, -1)
    dw = flat.T @ dy.reshape(n * ho * wo, c_out)
    db = dy.sum(axis=(0, 1, 2))
    return np.ascontiguousarray(dw.reshape(kh, kw, x.shape[3], c_out)), db


def conv2d_backward_input(dy, w, in_h, in_w, stride=1, pad=0):
    kh, kw, c_in, c_out = w.shape
    n, ho, wo, _ = dy.shape
    dcols = dy.reshape(n * ho * wo, c_out) @ w.reshape(kh * kw * c_in, c_out).T
    dcols = dcols.reshape(n, ho, wo, kh, kw, c_in)
    hp, wp = in_h + 2 * pad, in_w + 2 * pad
    dxp = np.zeros((n, hp, wp, c_in))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += dcols[
                :, :, :, i, j, :
            ]
    if pad:
        return np.ascontiguousarray(dxp[:, pad:-pad, pad:-pad, :])
    return dxp
