"""The recurrent cell family: one step interface, five gate structures.

All five variants share the update

    C_t = f * C_{t-1} + i * g        H_t = o * tanh(C_t)

and differ only in how the gates i, f, o and the input modulation g are
computed from (X_t, H_{t-1}):

* ``convlstm``       - i, f, o, g each from a full conv pair, no peepholes.
* ``fc``             - i, f, o are per-channel scalars: global average pool of
                       X and H through a dense layer, broadcast over pixels.
* ``sconv``          - i, f, o are per-pixel scalars: single-output-channel
                       convolutions, broadcast over channels.
* ``deconstructed``  - i, f, o compose both: sigmoid(channel_vec * spatial_map),
                       with the channel path biased and the spatial path
                       bias-free.
* ``msd``            - gates as ``deconstructed``; g comes from ``mconv``,
                       three parallel convolutions at kernel sizes (K-2, K,
                       K+2) whose outputs (Ch/4, Ch/2, Ch/4 channels) are
                       concatenated.

Weight serialization is a flat little-endian float64 stream preceded by the
config as six little-endian u32 (variant id, K, Cx, Ch, height, width).
Tensor order: gates i, f, o, g; within a gate, channel path before spatial
path and x-weights before h-weights; mconv branches small, middle, large;
all biases last (b_i, b_f, b_o, b_c).  Random initialization draws tensors
in that same order, so a seed pins the full parameter state.
"""

import enum
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .errors import FormatError, NumericError, ShapeError, ValidationError
from .tensor import Parameter, Tensor


class CellVariant(enum.Enum):
    CONVLSTM = "convlstm"
    FC = "fc"
    SCONV = "sconv"
    DECONSTRUCTED = "deconstructed"
    MSD = "msd"


_VARIANT_IDS = {v: i for i, v in enumerate(CellVariant)}
_CHANNEL_GATED = (CellVariant.FC, CellVariant.DECONSTRUCTED, CellVariant.MSD)
_SPATIAL_GATED = (CellVariant.SCONV, CellVariant.DECONSTRUCTED, CellVariant.MSD)


@dataclass(frozen=True)
class CellConfig:
    variant: CellVariant
    k: int
    cx: int
    ch: int
    height: int
    width: int

    def __post_init__(self):
        validate_cell_arithmetic(self.variant, self.k, self.cx, self.ch)
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"spatial extents must be >= 1, got {self.height}x{self.width}")


def validate_cell_arithmetic(variant, k, cx, ch):
    """Shared validity rules for anything parameterized like a cell."""
    if not isinstance(variant, CellVariant):
        raise ValidationError(f"unknown cell variant {variant!r}")
    if k < 3 or k % 2 == 0:
        raise ValidationError(f"kernel size must be odd and >= 3, got {k}")
    if cx < 1:
        raise ValidationError(f"input channels must be >= 1, got {cx}")
    if ch < 1:
        raise ValidationError(f"hidden channels must be >= 1, got {ch}")
    if variant is CellVariant.MSD and ch % 4 != 0:
        raise ValidationError(
            f"msd hidden channels must be divisible by 4 (split 1/4, 2/4, 1/4), got {ch}")


@dataclass
class GateParams:
    """Parameters of one of the gates i, f, o; unused paths stay None."""
    conv_x: Parameter = None
    conv_h: Parameter = None
    chan_x: Parameter = None
    chan_h: Parameter = None
    spat_x: Parameter = None
    spat_h: Parameter = None
    bias: Parameter = None

    def weights(self):
        return [p for p in (self.conv_x, self.conv_h, self.chan_x, self.chan_h,
                            self.spat_x, self.spat_h) if p is not None]


@dataclass
class ModulationParams:
    """Parameters of the input modulation g: one conv pair or the mconv triple."""
    conv_x: Parameter = None
    conv_h: Parameter = None
    mconv_x: tuple = None  # (small, middle, large)
    mconv_h: tuple = None
    bias: Parameter = None

    def weights(self):
        if self.conv_x is not None:
            return [self.conv_x, self.conv_h]
        return list(self.mconv_x) + list(self.mconv_h)


@dataclass
class CellParams:
    gi: GateParams
    gf: GateParams
    go: GateParams
    gg: ModulationParams

    def weight_tensors(self):
        out = []
        for gate in (self.gi, self.gf, self.go, self.gg):
            out.extend(gate.weights())
        return out

    def bias_tensors(self):
        out = [g.bias for g in (self.gi, self.gf, self.go) if g.bias is not None]
        out.append(self.gg.bias)
        return out

    def named_parameters(self):
        named = []
        for gate_name, gate in (("i", self.gi), ("f", self.gf), ("o", self.go)):
            for f in fields(gate):
                if f.name == "bias":
                    continue
                p = getattr(gate, f.name)
                if p is not None:
                    named.append((f"{gate_name}.{f.name}", p))
        if self.gg.conv_x is not None:
            named.append(("g.conv_x", self.gg.conv_x))
            named.append(("g.conv_h", self.gg.conv_h))
        else:
            for side, branches in (("x", self.gg.mconv_x), ("h", self.gg.mconv_h)):
                for scale, p in zip(("small", "middle", "large"), branches):
                    named.append((f"g.mconv_{side}.{scale}", p))
        for gate_name, gate in (("i", self.gi), ("f", self.gf), ("o", self.go)):
            if gate.bias is not None:
                named.append((f"{gate_name}.bias", gate.bias))
        named.append(("g.bias", self.gg.bias))
        return named


@dataclass
class CellState:
    h: Tensor
    c: Tensor


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-bound, bound, size=shape))


def _conv_param(rng, out_c, in_c, k):
    return _glorot(rng, (out_c, in_c, k, k), in_c * k * k, out_c * k * k)


def _gate_params(rng, variant, k, cx, ch, forget):
    gp = GateParams()
    if variant is CellVariant.CONVLSTM:
        gp.conv_x = _conv_param(rng, ch, cx, k)
        gp.conv_h = _conv_param(rng, ch, ch, k)
    if variant in _CHANNEL_GATED:
        gp.chan_x = _glorot(rng, (ch, cx), cx, ch)
        gp.chan_h = _glorot(rng, (ch, ch), ch, ch)
    if variant in _SPATIAL_GATED:
        gp.spat_x = _conv_param(rng, 1, cx, k)
        gp.spat_h = _conv_param(rng, 1, ch, k)
    bias_len = 1 if variant is CellVariant.SCONV else ch
    gp.bias = Parameter(np.full(bias_len, 1.0 if forget else 0.0))
    return gp


def init_cell_params(config, rng):
    variant, k, cx, ch = config.variant, config.k, config.cx, config.ch
    gi = _gate_params(rng, variant, k, cx, ch, forget=False)
    gf = _gate_params(rng, variant, k, cx, ch, forget=True)
    go = _gate_params(rng, variant, k, cx, ch, forget=False)
    gg = ModulationParams()
    if variant is CellVariant.MSD:
        splits = (ch // 4, ch // 2, ch // 4)
        kernels = (k - 2, k, k + 2)
        gg.mconv_x = tuple(_conv_param(rng, oc, cx, kk) for oc, kk in zip(splits, kernels))
        gg.mconv_h = tuple(_conv_param(rng, oc, ch, kk) for oc, kk in zip(splits, kernels))
    else:
        gg.conv_x = _conv_param(rng, ch, cx, k)
        gg.conv_h = _conv_param(rng, ch, ch, k)
    gg.bias = Parameter(np.zeros(ch))
    return CellParams(gi=gi, gf=gf, go=go, gg=gg)


def mconv(x, h, mod, k):
    """Multi-scale input modulation: parallel convolutions of x and h at
    kernel sizes (k-2, k, k+2), channel-concatenated (small, middle, large),
    summed, biased, and passed through tanh."""
    ax = ops.concat_channels([ops.conv2d(x, w) for w in mod.mconv_x])
    ah = ops.concat_channels([ops.conv2d(h, w) for w in mod.mconv_h])
    return ops.tanh(ops.add_channel_bias(ops.add(ax, ah), mod.bias))


def _finite(t, name):
    if not np.isfinite(t.data).all():
        raise NumericError("non-finite values", op=name)
    return t


class Cell:
    """One recurrent cell: immutable config + params, pure ``step``."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config, rng):
        return cls(config, init_cell_params(config, rng))

    def zero_state(self):
        shape = (self.config.ch, self.config.height, self.config.width)
        return CellState(h=Tensor.zeros(shape), c=Tensor.zeros(shape))

    def named_parameters(self):
        return self.params.named_parameters()

    def _gate(self, gp, name, x, h, xbar, hbar):
        variant = self.config.variant
        if variant is CellVariant.CONVLSTM:
            pre = ops.add(ops.conv2d(x, gp.conv_x), ops.conv2d(h, gp.conv_h))
            gate = ops.sigmoid(ops.add_channel_bias(pre, gp.bias))
        elif variant is CellVariant.FC:
            vec = ops.add(ops.fully_connected(xbar, gp.chan_x),
                          ops.fully_connected(hbar, gp.chan_h))
            vec = ops.sigmoid(ops.add(vec, gp.bias))
            gate = ops.broadcast_channels(vec, self.config.height, self.config.width)
        elif variant is CellVariant.SCONV:
            pre = ops.add(ops.conv2d(x, gp.spat_x), ops.conv2d(h, gp.spat_h))
            smap = ops.sigmoid(ops.add_channel_bias(pre, gp.bias))
            gate = ops.broadcast_spatial(smap, self.config.ch)
        else:  # deconstructed / msd: sigmoid(channel_vec * spatial_map)
            vec = ops.add(ops.fully_connected(xbar, gp.chan_x),
                          ops.fully_connected(hbar, gp.chan_h))
            vec = ops.add(vec, gp.bias)
            smap = ops.add(ops.conv2d(x, gp.spat_x), ops.conv2d(h, gp.spat_h))
            gate = ops.sigmoid(ops.hadamard_broadcast(vec, smap))
        return _finite(gate, f"gate {name}")

    def _modulation(self, x, h):
        gg = self.params.gg
        if self.config.variant is CellVariant.MSD:
            g = mconv(x, h, gg, self.config.k)
        else:
            pre = ops.add(ops.conv2d(x, gg.conv_x), ops.conv2d(h, gg.conv_h))
            g = ops.tanh(ops.add_channel_bias(pre, gg.bias))
        return _finite(g, "gate g")

    def step(self, x, state):
        cfg = self.config
        if x.shape != (cfg.cx, cfg.height, cfg.width):
            raise ShapeError("cell input shape mismatch",
                             expected=(cfg.cx, cfg.height, cfg.width), actual=x.shape)
        hidden_shape = (cfg.ch, cfg.height, cfg.width)
        if state.h.shape != hidden_shape or state.c.shape != hidden_shape:
            raise ShapeError("cell state shape mismatch",
                             expected=hidden_shape, actual=(state.h.shape, state.c.shape))

        if cfg.variant in _CHANNEL_GATED:
            xbar = ops.global_avg_pool(x)
            hbar = ops.global_avg_pool(state.h)
        else:
            xbar = hbar = None

        i = self._gate(self.params.gi, "i", x, state.h, xbar, hbar)
        f = self._gate(self.params.gf, "f", x, state.h, xbar, hbar)
        o = self._gate(self.params.go, "o", x, state.h, xbar, hbar)
        g = self._modulation(x, state.h)

        c_new = ops.add(ops.hadamard(f, state.c), ops.hadamard(i, g))
        h_new = ops.hadamard(o, ops.tanh(c_new))
        _finite(c_new, "cell state C")
        _finite(h_new, "hidden state H")
        return CellState(h=h_new, c=c_new)

    def to_bytes(self):
        return cell_to_bytes(self.config, self.params)

    @classmethod
    def from_bytes(cls, buf, offset=0):
        config, params, _ = cell_from_bytes(buf, offset)
        return cls(config, params)


def param_count_formula(variant, k, cx, ch):
    """Closed-form weight count (biases excluded) for a variant at (K, Cx, Ch)."""
    validate_cell_arithmetic(variant, k, cx, ch)
    s = cx + ch
    k2 = k * k
    if variant is CellVariant.CONVLSTM:
        return k2 * s * ch * 4
    if variant is CellVariant.FC:
        return s * (3 * ch + k2 * ch)
    if variant is CellVariant.SCONV:
        return s * (3 * k2 + k2 * ch)
    if variant is CellVariant.DECONSTRUCTED:
        return s * (3 * ch + 3 * k2 + k2 * ch)
    return s * (k2 * (ch + 3) + 5 * ch)  # msd


def param_count_enumerated(params):
    """Walk the allocated tensors: (weight entry count, bias entry count)."""
    weights = sum(p.data.size for p in params.weight_tensors())
    biases = sum(p.data.size for p in params.bias_tensors())
    return weights, biases


_HEADER = struct.Struct("<6I")


def cell_to_bytes(config, params):
    header = _HEADER.pack(_VARIANT_IDS[config.variant], config.k, config.cx,
                          config.ch, config.height, config.width)
    chunks = [header]
    for p in params.weight_tensors() + params.bias_tensors():
        chunks.append(p.data.astype("<f8", copy=False).tobytes())
    return b"".join(chunks)


def cell_from_bytes(buf, offset=0):
    """Parse a serialized cell; returns (config, params, end_offset)."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated cell header", offset=len(buf))
    vid, k, cx, ch, height, width = _HEADER.unpack_from(buf, offset)
    variants = list(CellVariant)
    if vid >= len(variants):
        raise FormatError(f"unknown cell variant id {vid}", offset=offset)
    try:
        config = CellConfig(variants[vid], k, cx, ch, height, width)
    except ValidationError as exc:
        raise FormatError(f"invalid cell config: {exc}", offset=offset) from exc

    params = init_cell_params(config, np.random.default_rng(0))
    tensors = params.weight_tensors() + params.bias_tensors()
    pos = offset + _HEADER.size
    for p in tensors:
        nbytes = p.data.size * 8
        if pos + nbytes > len(buf):
            raise FormatError(
                f"truncated cell stream (expected {nbytes} more bytes)", offset=pos)
        p.data[...] = np.frombuffer(buf, dtype="<f8", count=p.data.size,
                                    offset=pos).reshape(p.data.shape)
        p.zero_grad()
        pos += nbytes
    return config, params, pos
