"""Differentiable layers: dense, conv2d, activations, reshape, upsample, pool.

Each layer exposes
    build(params, seed)            -- register leaves (orthogonal weights)
    forward(params, x) -> (y, cache)
    backward(params, cache, dy) -> (dx, grads)
with float64 math throughout.  Images are NHWC.
"""

import numpy as np

from .. import _kernels
from .errors import ShapeError
from .params import orthogonal_init, stream_rng


class Dense:
    def __init__(self, name, n_in, n_out):
        self.name = name
        self.n_in = n_in
        self.n_out = n_out

    def build(self, params, seed):
        rng = stream_rng(seed, self.name + ".w")
        params.add(self.name + ".w", orthogonal_init(self.n_in, self.n_out, rng))
        params.add(self.name + ".b", np.zeros(self.n_out))

    def forward(self, params, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(
                f"layer '{self.name}': expected (N, {self.n_in}), got {x.shape}"
            )
        y = x @ params[self.name + ".w"] + params[self.name + ".b"]
        return y, x

    def backward(self, params, cache, dy):
        x = cache
        grads = {
            self.name + ".w": x.T @ dy,
            self.name + ".b": dy.sum(axis=0),
        }
        dx = dy @ params[self.name + ".w"].T
        return dx, grads


class Conv2d:
    """3x3-style convolution, stride 1 or 2, zero padding."""

    def __init__(self, name, c_in, c_out, kernel=3, stride=1, pad=None):
        if stride not in (1, 2):
            raise ShapeError(f"layer '{name}': stride must be 1 or 2")
        self.name = name
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def build(self, params, seed):
        rng = stream_rng(seed, self.name + ".w")
        k, ci, co = self.kernel, self.c_in, self.c_out
        w = orthogonal_init(k * k * ci, co, rng).reshape(k, k, ci, co)
        params.add(self.name + ".w", w)
        params.add(self.name + ".b", np.zeros(co))

    def forward(self, params, x):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ShapeError(
                f"layer '{self.name}': expected (N, H, W, {self.c_in}), got {x.shape}"
            )
        x = np.ascontiguousarray(x)
        y = _kernels.conv2d_forward(
            x, params[self.name + ".w"], params[self.name + ".b"], self.stride, self.pad
        )
        return y, x

    def backward(self, params, cache, dy):
        x = cache
        dy = np.ascontiguousarray(dy)
        dw, db = _kernels.conv2d_backward_params(
            x, dy, self.kernel, self.kernel, self.stride, self.pad
        )
        dx = _kernels.conv2d_backward_input(
            dy, params[self.name + ".w"], x.shape[1], x.shape[2], self.stride, self.pad
        )
        return dx, {self.name + ".w": dw, self.name + ".b": db}


class Tanh:
    name = "tanh"

    def build(self, params, seed):
        pass

    def forward(self, params, x):
        y = np.tanh(x)
        return y, y

    def backward(self, params, cache, dy):
        return dy * (1 - cache * cache), {}


class LeakyReLU:
    def __init__(self, alpha=0.2):
        self.name = "leaky_relu"
        self.alpha = alpha

    def build(self, params, seed):
        pass

    def forward(self, params, x):
        y = np.where(x >= 0, x, self.alpha * x)
        return y, x

    def backward(self, params, cache, dy):
        return dy * np.where(cache >= 0, 1.0, self.alpha), {}


class Reshape:
    """Per-sample reshape; batch axis is preserved."""

    def __init__(self, out_shape):
        self.name = "reshape"
        self.out_shape = tuple(out_shape)

    def build(self, params, seed):
        pass

    def forward(self, params, x):
        n = x.shape[0]
        if int(np.prod(x.shape[1:])) != int(np.prod(self.out_shape)):
            raise ShapeError(
                f"layer 'reshape': cannot map {x.shape[1:]} to {self.out_shape}"
            )
        return x.reshape((n,) + self.out_shape), x.shape

    def backward(self, params, cache, dy):
        return dy.reshape(cache), {}


class UpsampleNearest:
    def __init__(self, factor=2):
        self.name = "upsample"
        self.factor = factor

    def build(self, params, seed):
        pass

    def forward(self, params, x):
        f = self.factor
        return x.repeat(f, axis=1).repeat(f, axis=2), x.shape

    def backward(self, params, cache, dy):
        n, h, w, c = cache
        f = self.factor
        return dy.reshape(n, h, f, w, f, c).sum(axis=(2, 4)), {}


class GlobalAvgPool:
    name = "gap"

    def build(self, params, seed):
        pass

    def forward(self, params, x):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, params, cache, dy):
        n, h, w, c = cache
        return np.broadcast_to(dy[:, None, None, :], (n, h, w, c)) / (h * w), {}
