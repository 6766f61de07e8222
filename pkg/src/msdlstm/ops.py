"""Differentiable primitive operations.

Every gate and head in the package is composed from these.  Each op validates
its operand extents, computes forward with NumPy (conv2d through the selected
kernel backend), and, when a tape is active, records a closure that maps the
output gradient to input gradients.  Inputs are never mutated.
"""

import numpy as np

from . import backend
from .errors import ShapeError, ValidationError
from .tensor import Tensor, active_tape


def _record(out, inputs, backward_fn):
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _require_rank(t, rank, what):
    if t.data.ndim != rank:
        raise ShapeError(f"{what} must have rank {rank}", expected=rank, actual=t.data.ndim)


def conv2d(x, w, bias=None, stride=1):
    """2D correlation with zero 'same' padding.

    ``x`` is [C,H,W], ``w`` is [O,C,K,K] with K odd; output is [O,H',W'] where
    H' = ceil(H / stride) (H' = H for stride 1).  ``bias`` ([O]) is added per
    output channel.
    """
    _require_rank(x, 3, "conv2d input")
    _require_rank(w, 4, "conv2d weight")
    o, cw, k, k2 = w.shape
    if k != k2:
        raise ShapeError("conv2d kernel must be square", expected=k, actual=k2)
    if k % 2 == 0 or k < 1:
        raise ValidationError(f"conv2d kernel size must be odd and >= 1, got {k}")
    if cw != x.shape[0]:
        raise ShapeError("conv2d weight channels do not match input", expected=x.shape[0], actual=cw)
    if stride < 1:
        raise ValidationError(f"conv2d stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError("conv2d bias must be [O]", expected=(o,), actual=bias.shape)

    c, h, wdt = x.shape
    y = backend.conv2d_forward(x.data, w.data, stride)
    if bias is not None:
        y += bias.data[:, None, None]
    out = Tensor(y)

    def bwd(gy):
        gy = np.ascontiguousarray(gy)
        gx = backend.conv2d_backward_input(gy, w.data, stride, h, wdt)
        gw = backend.conv2d_backward_weight(x.data, gy, stride, k)
        if bias is None:
            return gx, gw
        return gx, gw, gy.sum(axis=(1, 2))

    inputs = (x, w) if bias is None else (x, w, bias)
    return _record(out, inputs, bwd)


def global_avg_pool(x):
    """[C,H,W] -> [C]: arithmetic mean over each channel's spatial plane."""
    _require_rank(x, 3, "global_avg_pool input")
    c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("global_avg_pool needs a nonempty spatial extent", actual=(h, w))
    out = Tensor(x.data.mean(axis=(1, 2)))

    def bwd(gy):
        return (np.broadcast_to(gy[:, None, None] / (h * w), x.shape).copy(),)

    return _record(out, (x,), bwd)


def fully_connected(x, w, bias=None):
    """Affine map on a vector: [Cout,Cin] @ [Cin] (+ [Cout])."""
    _require_rank(x, 1, "fully_connected input")
    _require_rank(w, 2, "fully_connected weight")
    cout, cin = w.shape
    if cin != x.shape[0]:
        raise ShapeError("fully_connected inner extent mismatch", expected=x.shape[0], actual=cin)
    if bias is not None and bias.shape != (cout,):
        raise ShapeError("fully_connected bias must be [Cout]", expected=(cout,), actual=bias.shape)
    y = w.data @ x.data
    if bias is not None:
        y = y + bias.data
    out = Tensor(y)

    def bwd(gy):
        gx = w.data.T @ gy
        gw = np.outer(gy, x.data)
        if bias is None:
            return gx, gw
        return gx, gw, gy.copy()

    inputs = (x, w) if bias is None else (x, w, bias)
    return _record(out, inputs, bwd)


def _open_interval(data, lo, hi):
    # Keep saturating nonlinearities strictly inside their open range: deep in
    # the tails the float result rounds to the endpoint itself, so nudge such
    # entries one ulp inward.
    one = data.dtype.type(1)
    np.clip(data, np.nextafter(lo * one, hi * one), np.nextafter(hi * one, lo * one),
            out=data)
    return data


def sigmoid(x):
    """Elementwise logistic function; output strictly inside (0, 1)."""
    y = np.empty_like(x.data)
    np.negative(np.abs(x.data), out=y)
    np.exp(y, out=y)  # e^{-|x|} in (0, 1]
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + y), y / (1.0 + y))
    out = Tensor(_open_interval(out_data, 0, 1))

    def bwd(gy):
        return (gy * out.data * (1.0 - out.data),)

    return _record(out, (x,), bwd)


def tanh(x):
    """Elementwise hyperbolic tangent; output strictly inside (-1, 1)."""
    out = Tensor(_open_interval(np.tanh(x.data), -1, 1))

    def bwd(gy):
        return (gy * (1.0 - out.data * out.data),)

    return _record(out, (x,), bwd)


def add(a, b):
    """Elementwise sum of two tensors of identical shape."""
    if a.shape != b.shape:
        raise ShapeError("add operands differ in shape", expected=a.shape, actual=b.shape)
    out = Tensor(a.data + b.data)

    def bwd(gy):
        return gy, gy

    return _record(out, (a, b), bwd)


def hadamard(a, b):
    """Elementwise product of two tensors of identical shape."""
    if a.shape != b.shape:
        raise ShapeError("hadamard operands differ in shape", expected=a.shape, actual=b.shape)
    out = Tensor(a.data * b.data)

    def bwd(gy):
        return gy * b.data, gy * a.data

    return _record(out, (a, b), bwd)


def hadamard_broadcast(vec, spatial):
    """Outer product of a channel vector [C] with a 1-channel map [1,H,W].

    out[c,h,w] = vec[c] * spatial[0,h,w]; this is the composition that turns
    a channel-wise gate and a spatial gate into one [C,H,W] gate.
    """
    _require_rank(vec, 1, "hadamard_broadcast vector")
    _require_rank(spatial, 3, "hadamard_broadcast map")
    if spatial.shape[0] != 1:
        raise ShapeError("hadamard_broadcast map must have exactly one channel",
                         expected=1, actual=spatial.shape[0])
    out = Tensor(vec.data[:, None, None] * spatial.data)

    def bwd(gy):
        gvec = (gy * spatial.data[0]).sum(axis=(1, 2))
        gmap = (gy * vec.data[:, None, None]).sum(axis=0, keepdims=True)
        return gvec, gmap

    return _record(out, (vec, spatial), bwd)


def broadcast_channels(vec, h, w):
    """Replicate a channel vector [C] into a [C,h,w] map."""
    _require_rank(vec, 1, "broadcast_channels vector")
    out = Tensor(np.broadcast_to(vec.data[:, None, None], (vec.shape[0], h, w)).copy())

    def bwd(gy):
        return (gy.sum(axis=(1, 2)),)

    return _record(out, (vec,), bwd)


def broadcast_spatial(spatial, c):
    """Replicate a 1-channel map [1,H,W] across ``c`` channels."""
    _require_rank(spatial, 3, "broadcast_spatial map")
    if spatial.shape[0] != 1:
        raise ShapeError("broadcast_spatial map must have exactly one channel",
                         expected=1, actual=spatial.shape[0])
    out = Tensor(np.broadcast_to(spatial.data, (c,) + spatial.shape[1:]).copy())

    def bwd(gy):
        return (gy.sum(axis=0, keepdims=True),)

    return _record(out, (spatial,), bwd)


def add_channel_bias(x, bias):
    """Add a per-channel bias vector [C] to a [C,H,W] map."""
    _require_rank(x, 3, "add_channel_bias input")
    _require_rank(bias, 1, "add_channel_bias bias")
    if bias.shape[0] != x.shape[0]:
        raise ShapeError("bias length must equal channel count",
                         expected=x.shape[0], actual=bias.shape[0])
    out = Tensor(x.data + bias.data[:, None, None])

    def bwd(gy):
        return gy, gy.sum(axis=(1, 2))

    return _record(out, (x, bias), bwd)


def concat_channels(parts):
    """Stack [Ci,H,W] tensors along the channel axis in argument order."""
    parts = tuple(parts)
    if not parts:
        raise ValidationError("concat_channels needs at least one part")
    for p in parts:
        _require_rank(p, 3, "concat_channels part")
    hw = parts[0].shape[1:]
    for p in parts[1:]:
        if p.shape[1:] != hw:
            raise ShapeError("concat_channels parts differ in spatial size",
                             expected=hw, actual=p.shape[1:])
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]

    def bwd(gy):
        return tuple(np.ascontiguousarray(g) for g in np.split(gy, splits, axis=0))

    return _record(out, parts, bwd)


def _interp_axis(n_in, n_out):
    # Corner-aligned sample positions: first/last output pixels hit the
    # first/last input pixels exactly.
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(pos.astype(np.intp), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_upsample(x, out_h, out_w):
    """Corner-aligned bilinear interpolation of [C,h,w] up to [C,out_h,out_w]."""
    _require_rank(x, 3, "bilinear_upsample input")
    c, h, w = x.shape
    if out_h < h or out_w < w:
        raise ValidationError(
            f"bilinear_upsample cannot shrink: {h}x{w} -> {out_h}x{out_w}")
    ylo, yhi, fy = _interp_axis(h, out_h)
    xlo, xhi, fx = _interp_axis(w, out_w)
    wy = fy[None, :, None]
    wx = fx[None, None, :]
    d = x.data
    out_data = ((1 - wy) * ((1 - wx) * d[:, ylo][:, :, xlo] + wx * d[:, ylo][:, :, xhi])
                + wy * ((1 - wx) * d[:, yhi][:, :, xlo] + wx * d[:, yhi][:, :, xhi]))
    out = Tensor(out_data)

    def bwd(gy):
        gx = np.zeros_like(x.data)
        ci = np.arange(c)[:, None, None]
        for rows, wr in ((ylo, 1 - fy), (yhi, fy)):
            for cols, wc in ((xlo, 1 - fx), (xhi, fx)):
                g = gy * (wr[None, :, None] * wc[None, None, :])
                np.add.at(gx, (ci, rows[None, :, None], cols[None, None, :]), g)
        return (gx,)

    return _record(out, (x,), bwd)


def softmax_cross_entropy(logits, labels):
    """Mean over pixels of -log softmax probability of the labeled class.

    ``logits`` is [Classes,H,W]; ``labels`` is an integer [H,W] grid.  The
    softmax normalizes over the class axis independently per pixel.
    """
    _require_rank(logits, 3, "softmax_cross_entropy logits")
    labels = np.asarray(labels)
    n_classes, h, w = logits.shape
    if labels.shape != (h, w):
        raise ShapeError("label grid must match logit spatial size",
                         expected=(h, w), actual=labels.shape)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError("labels must be integers")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValidationError(
            f"label ids must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]")

    z = logits.data - logits.data.max(axis=0, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=0, keepdims=True)
    logp = z - np.log(denom)
    ii, jj = np.indices((h, w))
    out = Tensor(-logp[labels, ii, jj].mean())

    def bwd(gy):
        g = ez / denom
        g[labels, ii, jj] -= 1.0
        return (g * (float(gy) / (h * w)),)

    return _record(out, (logits,), bwd)


def sum_all(x):
    """Sum of all entries, as a rank-0 tensor (handy scalar loss for checks)."""
    out = Tensor(x.data.sum())

    def bwd(gy):
        return (np.broadcast_to(gy, x.shape).copy(),)

    return _record(out, (x,), bwd)
