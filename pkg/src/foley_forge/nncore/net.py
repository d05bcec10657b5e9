"""Sequential network container over nncore layers."""

import numpy as np

from .params import ParamTree


class Net:
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, seed: int) -> ParamTree:
        params = ParamTree()
        for layer in self.layers:
            layer.build(params, seed)
        return params

    def forward(self, params, x):
        y, _ = self.forward_cached(params, x)
        return y

    def forward_cached(self, params, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(params, x)
            caches.append(cache)
        return x, caches

    def backward(self, params, caches, dy):
        """Upstream gradient -> (input gradient, per-leaf gradient dict)."""
        grads = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(params, cache, dy)
            for k, v in layer_grads.items():
                if k in grads:
                    grads[k] = grads[k] + v
                else:
                    grads[k] = v
        return dy, grads


def merge_grads(target: dict, extra: dict, scale: float = 1.0):
    """Accumulate `extra` into `target` in place (missing keys created)."""
    for k, v in extra.items():
        if k in target:
            target[k] += scale * v
        else:
            target[k] = scale * np.asarray(v, dtype=np.float64).copy()
    return target
