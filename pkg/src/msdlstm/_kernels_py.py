"""Pure-NumPy convolution kernels (fallback backend).

Same-zero padding, odd kernels only.  Output spatial size is
``ceil(in / stride)`` per axis; stride 1 therefore preserves the input size.
All three entry points share the geometry of the compiled backend in
``_convkernels.pyx`` and are interchangeable with it.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(n, stride):
    return (n + stride - 1) // stride


def _cols(x, k, stride):
    # im2col: rows indexed by output pixel, columns by (channel, dy, dx).
    c = x.shape[0]
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    return win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * k * k), ho, wo


def conv2d_forward(x, w, stride=1):
    o, _, k, _ = w.shape
    cols, ho, wo = _cols(x, k, stride)
    y = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(y.T).reshape(o, ho, wo)


def conv2d_backward_weight(x, gy, stride, k):
    o = gy.shape[0]
    c = x.shape[0]
    cols, _, _ = _cols(x, k, stride)
    return (gy.reshape(o, -1) @ cols).reshape(o, c, k, k)


def conv2d_backward_input(gy, w, stride, h, wdt):
    o, c, k, _ = w.shape
    ho, wo = gy.shape[1], gy.shape[2]
    p = (k - 1) // 2
    gcols = gy.reshape(o, -1).T @ w.reshape(o, -1)
    g = gcols.reshape(ho, wo, c, k, k)
    gxp = np.zeros((c, h + 2 * p, wdt + 2 * p), dtype=gy.dtype)
    for dy in range(k):
        for dx in range(k):
            gxp[:, dy : dy + (ho - 1) * stride + 1 : stride,
                dx : dx + (wo - 1) * stride + 1 : stride] += g[:, :, :, dy, dx].transpose(2, 0, 1)
    return np.ascontiguousarray(gxp[:, p : p + h, p : p + wdt])
