"""Convolution kernel backend selection.

Prefers the compiled Cython extension; falls back to the numpy im2col
implementation when the extension is missing or FOLEY_FORGE_PURE=1 is set.
Both backends share one API and agree to float tolerance (not bitwise:
summation order differs).
"""

import os

from . import conv_np

if os.environ.get("FOLEY_FORGE_PURE") == "1":
    _impl = conv_np
    BACKEND = "numpy"
else:
    try:
        from . import _convcy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = conv_np
        BACKEND = "numpy"


def conv2d_forward(x, w, b, stride=1, pad=0):
    return _impl.conv2d_forward(x, w, b, stride, pad)


def conv2d_backward_params(x, dy, kh, kw, stride=1, pad=0):
    return _impl.conv2d_backward_params(x, dy, kh, kw, stride, pad)


def conv2d_backward_input(dy, w, in_h, in_w, stride=1, pad=0):
    return _impl.conv2d_backward_input(dy, w, in_h, in_w, stride, pad)
