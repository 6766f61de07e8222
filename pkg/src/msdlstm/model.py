"""Encoder-decoder forecaster.

Each of the four element sequences (R = relative humidity, A = air
temperature, U, V = wind components) passes through its own small CNN encoder
(architecture shared, parameters never shared).  Per time step the four
feature maps are channel-concatenated and fed to a recurrent cell; the final
hidden state goes through two 3x3 refinement convolutions and a bilinear
upsample to the label grid, yielding per-pixel class logits.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import ops
from .cells import Cell, CellConfig, CellVariant, cell_from_bytes
from .errors import FormatError, ShapeError, ValidationError
from .tensor import Parameter, Tensor

ELEMENT_NAMES = ("R", "A", "U", "V")
N_ELEMENTS = 4


def _ceil_div(n, d):
    return -(-n // d)


@dataclass(frozen=True)
class EncoderConfig:
    """Per-element CNN: (out_channels, kernel, stride) conv layers, each
    followed by tanh.  Convolutions use zero 'same' padding, so a stride-s
    layer maps spatial extent n to ceil(n / s).

    The default reduces the grid by 2x overall, keeping the feature maps at
    the label resolution; a second stride-2 layer loses too much boundary
    detail for the forecaster to beat persistence on the synthetic task.
    """

    layers: tuple = ((8, 3, 2), (8, 3, 1), (8, 3, 1))

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("encoder needs at least one conv layer")
        for out_c, k, stride in self.layers:
            if out_c < 1:
                raise ValidationError(f"encoder layer channels must be >= 1, got {out_c}")
            if k < 1 or k % 2 == 0:
                raise ValidationError(f"encoder kernel must be odd and >= 1, got {k}")
            if stride < 1:
                raise ValidationError(f"encoder stride must be >= 1, got {stride}")

    @property
    def feature_channels(self):
        return self.layers[-1][0]

    def output_size(self, h, w):
        for _, _, stride in self.layers:
            h, w = _ceil_div(h, stride), _ceil_div(w, stride)
        return h, w


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    cell: CellConfig
    t: int
    num_classes: int
    input_h: int
    input_w: int
    label_h: int
    label_w: int

    def __post_init__(self):
        if self.t < 1:
            raise ValidationError(f"sequence length must be >= 1, got {self.t}")
        if self.num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.num_classes}")
        if self.input_h < 1 or self.input_w < 1:
            raise ValidationError("input grid must be nonempty")
        fh, fw = self.encoder.output_size(self.input_h, self.input_w)
        if self.cell.cx != N_ELEMENTS * self.encoder.feature_channels:
            raise ValidationError(
                f"cell input channels must be 4 x feature_channels "
                f"({N_ELEMENTS * self.encoder.feature_channels}), got {self.cell.cx}")
        if (self.cell.height, self.cell.width) != (fh, fw):
            raise ValidationError(
                f"cell spatial size {self.cell.height}x{self.cell.width} does not "
                f"match encoder output {fh}x{fw}")
        if self.label_h < fh or self.label_w < fw:
            raise ValidationError(
                f"label grid {self.label_h}x{self.label_w} smaller than feature "
                f"grid {fh}x{fw}; the classifier only upsamples")

    @classmethod
    def build(cls, input_h, input_w, variant=CellVariant.MSD, ch=16, k=3, t=4,
              num_classes=5, encoder=None, label_h=None, label_w=None):
        encoder = encoder or EncoderConfig()
        fh, fw = encoder.output_size(input_h, input_w)
        cell = CellConfig(variant, k, N_ELEMENTS * encoder.feature_channels, ch, fh, fw)
        return cls(encoder=encoder, cell=cell, t=t, num_classes=num_classes,
                   input_h=input_h, input_w=input_w,
                   label_h=label_h or input_h // 2, label_w=label_w or input_w // 2)


def _glorot_conv(rng, out_c, in_c, k):
    bound = np.sqrt(6.0 / ((in_c + out_c) * k * k))
    return Parameter(rng.uniform(-bound, bound, size=(out_c, in_c, k, k)))


def _init_encoder(config, rng):
    layers = []
    in_c = 1
    for out_c, k, stride in config.layers:
        w = _glorot_conv(rng, out_c, in_c, k)
        b = Parameter(np.zeros(out_c))
        layers.append((w, b, stride))
        in_c = out_c
    return layers


def _init_classifier(ch, num_classes, rng):
    return (_glorot_conv(rng, ch, ch, 3), Parameter(np.zeros(ch)),
            _glorot_conv(rng, num_classes, ch, 3), Parameter(np.zeros(num_classes)))


class Forecaster:
    """Four non-shared encoders + one recurrent cell + pixel classifier."""

    def __init__(self, config, encoders, cell, classifier):
        self.config = config
        self.encoders = encoders  # one conv stack per element, order R, A, U, V
        self.cell = cell
        self.classifier = classifier

    @classmethod
    def create(cls, config, rng):
        encoders = [_init_encoder(config.encoder, rng) for _ in range(N_ELEMENTS)]
        cell = Cell.create(config.cell, rng)
        classifier = _init_classifier(config.cell.ch, config.num_classes, rng)
        return cls(config, encoders, cell, classifier)

    def named_parameters(self):
        named = []
        for e, stack in enumerate(self.encoders):
            for li, (w, b, _) in enumerate(stack):
                named.append((f"enc_{ELEMENT_NAMES[e]}.l{li}.w", w))
                named.append((f"enc_{ELEMENT_NAMES[e]}.l{li}.b", b))
        named.extend((f"cell.{n}", p) for n, p in self.cell.named_parameters())
        w1, b1, w2, b2 = self.classifier
        named.extend([("head.w1", w1), ("head.b1", b1),
                      ("head.w2", w2), ("head.b2", b2)])
        return named

    def encode_element(self, element_index, grid):
        """Run one element grid [1,H,W] through that element's encoder."""
        if grid.shape != (1, self.config.input_h, self.config.input_w):
            raise ShapeError("element grid shape mismatch",
                             expected=(1, self.config.input_h, self.config.input_w),
                             actual=grid.shape)
        x = grid
        for w, b, stride in self.encoders[element_index]:
            x = ops.tanh(ops.conv2d(x, w, bias=b, stride=stride))
        return x

    def forward_sequence(self, elements):
        """Logits [num_classes, label_h, label_w] from elements [T,4,H,W]."""
        cfg = self.config
        elements = np.asarray(elements)
        expected = (cfg.t, N_ELEMENTS, cfg.input_h, cfg.input_w)
        if elements.shape != expected:
            raise ShapeError("element sequence shape mismatch",
                             expected=expected, actual=elements.shape)
        state = self.cell.zero_state()
        for t in range(cfg.t):
            feats = [self.encode_element(e, Tensor(elements[t, e][None]))
                     for e in range(N_ELEMENTS)]
            x_t = ops.concat_channels(feats)
            state = self.cell.step(x_t, state)
        w1, b1, w2, b2 = self.classifier
        z = ops.tanh(ops.conv2d(state.h, w1, bias=b1))
        z = ops.conv2d(z, w2, bias=b2)
        return ops.bilinear_upsample(z, cfg.label_h, cfg.label_w)

    def loss(self, elements, label):
        """Pixel-wise cross entropy of the forecast against a label grid."""
        return ops.softmax_cross_entropy(self.forward_sequence(elements), label)

    def predict(self, elements):
        logits = self.forward_sequence(elements)
        return logits.data.argmax(axis=0)

    # -- checkpoint format -------------------------------------------------
    # magic "MSDM", u32 version, then u32 fields: input_h, input_w, t,
    # num_classes, label_h, label_w, n_layers, (out_c, k, stride) per layer.
    # Followed by float64 streams for the four encoders (element order
    # R, A, U, V; per layer weight then bias), the full cell stream
    # (including its own config header), and the classifier (w1, b1, w2, b2).

    _MAGIC = b"MSDM"
    _VERSION = 1

    def to_bytes(self):
        cfg = self.config
        head = [self._MAGIC, struct.pack("<7I", self._VERSION, cfg.input_h,
                                         cfg.input_w, cfg.t, cfg.num_classes,
                                         cfg.label_h, cfg.label_w)]
        head.append(struct.pack("<I", len(cfg.encoder.layers)))
        for layer in cfg.encoder.layers:
            head.append(struct.pack("<3I", *layer))
        chunks = head
        for stack in self.encoders:
            for w, b, _ in stack:
                chunks.append(w.data.astype("<f8", copy=False).tobytes())
                chunks.append(b.data.astype("<f8", copy=False).tobytes())
        chunks.append(self.cell.to_bytes())
        for p in self.classifier:
            chunks.append(p.data.astype("<f8", copy=False).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf):
        if buf[:4] != cls._MAGIC:
            raise FormatError(f"bad checkpoint magic {buf[:4]!r}", offset=0)
        pos = 4
        try:
            version, in_h, in_w, t, n_classes, lab_h, lab_w = struct.unpack_from("<7I", buf, pos)
            pos += 28
            if version != cls._VERSION:
                raise FormatError(f"unsupported checkpoint version {version}", offset=4)
            (n_layers,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            layers = []
            for _ in range(n_layers):
                layers.append(struct.unpack_from("<3I", buf, pos))
                pos += 12
        except struct.error as exc:
            raise FormatError(f"truncated checkpoint header: {exc}", offset=pos) from exc

        encoder_cfg = EncoderConfig(layers=tuple(layers))
        rng = np.random.default_rng(0)
        encoders = []
        for _ in range(N_ELEMENTS):
            stack = _init_encoder(encoder_cfg, rng)
            for w, b, _ in stack:
                for p in (w, b):
                    n = p.data.size * 8
                    if pos + n > len(buf):
                        raise FormatError("truncated encoder stream", offset=pos)
                    p.data[...] = np.frombuffer(buf, "<f8", p.data.size, pos).reshape(p.data.shape)
                    pos += n
            encoders.append(stack)

        cell_cfg, cell_params, pos = cell_from_bytes(buf, pos)
        cell = Cell(cell_cfg, cell_params)

        classifier = _init_classifier(cell_cfg.ch, n_classes, rng)
        for p in classifier:
            n = p.data.size * 8
            if pos + n > len(buf):
                raise FormatError("truncated classifier stream", offset=pos)
            p.data[...] = np.frombuffer(buf, "<f8", p.data.size, pos).reshape(p.data.shape)
            pos += n
        if pos != len(buf):
            raise FormatError(f"{len(buf) - pos} trailing bytes after checkpoint", offset=pos)

        config = ModelConfig(encoder=encoder_cfg, cell=cell_cfg, t=t,
                             num_classes=n_classes, input_h=in_h, input_w=in_w,
                             label_h=lab_h, label_w=lab_w)
        return cls(config, encoders, cell, classifier)
