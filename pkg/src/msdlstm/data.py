"""Synthetic spatiotemporal weather data and its on-disk container.

The generator builds, per sample, a divergence-free wind field (from a random
low-wavenumber streamfunction), Gaussian humidity blobs, and a smooth
temperature field; humidity and temperature are advected by the wind
(semi-Lagrangian with bilinear sampling, periodic boundaries).  Rainfall over
the interval following step t is a deterministic smooth function of the step-t
state: humidity level, moisture flux convergence, and temperature gradient
magnitude.  The label grid discretizes the block-averaged rainfall after the
last stored step, so it is predictable from the stored elements and the wind
genuinely matters.

GRIDSEQ container (version 1, all integers little-endian u32):

    magic "GSQ1"
    n_samples, T, n_elements(=4), H, W, label_h, label_w, num_classes
    per sample: T*4 element grids, row-major little-endian float64,
                followed by the label grid as u8

PPM heatmaps are binary P6: class grids use a fixed five-color palette,
real-valued grids are min-max grayscale.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

# Left-closed rainfall bins (mm): no rain, light, moderate, heavy, rainstorm.
CLASS_BOUNDS_MM = (0.01, 3.0, 11.0, 25.0)
FIVE_CLASS_NAMES = ("no_rain", "light_rain", "moderate_rain", "heavy_rain", "rainstorm")
SCHEMES = {"five": 5, "binary": 2}

HEATMAP_PALETTE = (
    (245, 245, 245),  # no rain
    (150, 205, 255),  # light
    (30, 80, 230),    # moderate
    (250, 200, 30),   # heavy
    (220, 30, 30),    # rainstorm
)


def precip_to_class(mm, scheme="five"):
    """Map a rainfall amount in mm to its class id under the given scheme."""
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; use 'five' or 'binary'")
    if not np.isfinite(mm) or mm < 0:
        raise ValidationError(f"rainfall must be finite and >= 0, got {mm}")
    if scheme == "binary":
        return 0 if mm < CLASS_BOUNDS_MM[0] else 1
    return int(np.searchsorted(CLASS_BOUNDS_MM, mm, side="right"))


def classify_grid(mm_grid, scheme="five"):
    """Vectorized ``precip_to_class`` for a nonnegative grid."""
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; use 'five' or 'binary'")
    mm_grid = np.asarray(mm_grid)
    if not np.isfinite(mm_grid).all() or (mm_grid < 0).any():
        raise ValidationError("rainfall grid must be finite and >= 0")
    if scheme == "binary":
        return (mm_grid >= CLASS_BOUNDS_MM[0]).astype(np.uint8)
    return np.searchsorted(CLASS_BOUNDS_MM, mm_grid, side="right").astype(np.uint8)


# Stored wind grids are in units of WIND_UNIT_CELLS grid cells per step, which
# keeps element magnitudes of order one; advection converts back to cells.
WIND_UNIT_CELLS = 5.0


@dataclass(frozen=True)
class RainParams:
    """Coefficients of the rainfall diagnostic (mm per interval)."""
    humidity_threshold: float = 0.78
    flux_gain: float = 2.0
    tgrad_gain: float = 1.0
    sharpness: float = 20.0
    scale_mm: float = 60.0


DEFAULT_RAIN = RainParams()


def _ddx(f):
    return 0.5 * (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1))


def _ddy(f):
    return 0.5 * (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0))


def rainfall_intensity(q, a, u, v, params=DEFAULT_RAIN):
    """Rainfall (mm) over the next interval from the current element state."""
    flux_conv = -(_ddx(q * u) + _ddy(q * v))
    tgrad = np.hypot(_ddx(a), _ddy(a))
    drive = (q - params.humidity_threshold) + params.flux_gain * flux_conv \
        - params.tgrad_gain * tgrad
    return params.scale_mm * np.logaddexp(0.0, params.sharpness * drive) / params.sharpness


def advect(field, u, v, dt=1.0):
    """Semi-Lagrangian transport: sample the field at the departure points
    (bilinear interpolation, periodic boundaries)."""
    h, w = field.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sy = (yy - dt * v) % h
    sx = (xx - dt * u) % w
    y0 = np.floor(sy).astype(np.intp) % h
    x0 = np.floor(sx).astype(np.intp) % w
    y1 = (y0 + 1) % h
    x1 = (x0 + 1) % w
    fy = sy - np.floor(sy)
    fx = sx - np.floor(sx)
    return ((1 - fy) * ((1 - fx) * field[y0, x0] + fx * field[y0, x1])
            + fy * ((1 - fx) * field[y1, x0] + fx * field[y1, x1]))


@dataclass(frozen=True)
class GeneratorParams:
    wind_speed: float = 7.0        # max advection displacement, grid cells/step
    n_blobs: tuple = (2, 5)        # inclusive range of humidity blobs
    blob_sigma: tuple = (3.5, 7.0)
    blob_amp: tuple = (0.35, 0.8)
    humidity_base: tuple = (0.08, 0.28)
    temp_scale: float = 1.0
    rain: RainParams = DEFAULT_RAIN


DEFAULT_GENERATOR = GeneratorParams()


def _wind_field(rng, h, w, speed):
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    for _ in range(3):
        ky, kx = rng.integers(1, 3, size=2)
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = rng.uniform(0.4, 1.0)
        arg = 2 * np.pi * (kx * xx / w + ky * yy / h) + phase
        cos = np.cos(arg)
        u += amp * cos * (2 * np.pi * ky / h)   # d(psi)/dy
        v -= amp * cos * (2 * np.pi * kx / w)   # -d(psi)/dx
    peak = max(np.abs(u).max(), np.abs(v).max())
    if peak > 0 and speed > 0:
        scale = speed * rng.uniform(0.6, 1.0) / peak
        u *= scale
        v *= scale
    else:
        u[:] = 0.0
        v[:] = 0.0
    return u, v


def _periodic_gauss(yy, xx, cy, cx, sigma, h, w):
    dy = (yy - cy + h / 2) % h - h / 2
    dx = (xx - cx + w / 2) % w - w / 2
    return np.exp(-(dy * dy + dx * dx) / (2 * sigma * sigma))


def _humidity_field(rng, h, w, params):
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    q = np.full((h, w), rng.uniform(*params.humidity_base))
    for _ in range(rng.integers(params.n_blobs[0], params.n_blobs[1] + 1)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(*params.blob_sigma)
        amp = rng.uniform(*params.blob_amp)
        q += amp * _periodic_gauss(yy, xx, cy, cx, sigma, h, w)
    return q


def _temperature_field(rng, h, w, scale):
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    a = rng.uniform(-1, 1) * (yy / h - 0.5) + rng.uniform(-1, 1) * (xx / w - 0.5)
    for _ in range(2):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        a += rng.uniform(-0.6, 0.6) * _periodic_gauss(yy, xx, cy, cx,
                                                      rng.uniform(4.0, 9.0), h, w)
    return scale * a


def _block_mean(grid, out_h, out_w):
    h, w = grid.shape
    return grid.reshape(out_h, h // out_h, out_w, w // out_w).mean(axis=(1, 3))


@dataclass
class GridSequenceSample:
    elements: np.ndarray  # [T, 4, H, W] float64, element order R, A, U, V
    label: np.ndarray     # [label_h, label_w] uint8, interval after step T


@dataclass
class GridSequenceDataset:
    elements: np.ndarray  # [N, T, 4, H, W]
    labels: np.ndarray    # [N, label_h, label_w] uint8
    num_classes: int

    def __len__(self):
        return self.elements.shape[0]

    def __getitem__(self, i):
        return GridSequenceSample(elements=self.elements[i], label=self.labels[i])

    @property
    def t(self):
        return self.elements.shape[1]

    def split(self, n_tail):
        """Deterministic split: the last ``n_tail`` samples become the
        validation set."""
        if not 0 < n_tail < len(self):
            raise ValidationError(f"cannot hold out {n_tail} of {len(self)} samples")
        head = GridSequenceDataset(self.elements[:-n_tail], self.labels[:-n_tail],
                                   self.num_classes)
        tail = GridSequenceDataset(self.elements[-n_tail:], self.labels[-n_tail:],
                                   self.num_classes)
        return head, tail


def generate_synthetic(seed, n_samples, t=4, height=32, width=32, scheme="five",
                       params=DEFAULT_GENERATOR):
    """Generate a labeled dataset; bit-identical for identical arguments.

    Per-sample RNG streams are derived from (seed, sample index), so any
    subset of indices reproduces regardless of n_samples.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; use 'five' or 'binary'")
    if t < 2:
        raise ValidationError(f"need at least 2 time steps, got {t}")
    if height < 16 or width < 16 or height % 2 or width % 2:
        raise ValidationError(
            f"grid must be even and at least 16x16, got {height}x{width}")
    if n_samples < 1:
        raise ValidationError("need at least one sample")

    lab_h, lab_w = height // 2, width // 2
    elements = np.empty((n_samples, t, 4, height, width))
    labels = np.empty((n_samples, lab_h, lab_w), dtype=np.uint8)
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        u_cells, v_cells = _wind_field(rng, height, width, params.wind_speed)
        u, v = u_cells / WIND_UNIT_CELLS, v_cells / WIND_UNIT_CELLS
        q = _humidity_field(rng, height, width, params)
        a = _temperature_field(rng, height, width, params.temp_scale)
        for step in range(t):
            elements[i, step, 0] = q
            elements[i, step, 1] = a
            elements[i, step, 2] = u
            elements[i, step, 3] = v
            if step < t - 1:
                q = advect(q, u_cells, v_cells)
                a = advect(a, u_cells, v_cells)
        rain = rainfall_intensity(q, a, u, v, params.rain)
        labels[i] = classify_grid(_block_mean(rain, lab_h, lab_w), scheme)
    return GridSequenceDataset(elements=elements, labels=labels,
                               num_classes=SCHEMES[scheme])


# -- GRIDSEQ I/O ------------------------------------------------------------

_GSQ_MAGIC = b"GSQ1"
_GSQ_HEADER = struct.Struct("<8I")


def write_gridseq(path, dataset):
    n, t, n_el, h, w = dataset.elements.shape
    lab_h, lab_w = dataset.labels.shape[1:]
    with open(path, "wb") as fh:
        fh.write(_GSQ_MAGIC)
        fh.write(_GSQ_HEADER.pack(n, t, n_el, h, w, lab_h, lab_w, dataset.num_classes))
        for i in range(n):
            fh.write(dataset.elements[i].astype("<f8", copy=False).tobytes())
            fh.write(dataset.labels[i].tobytes())


def read_gridseq(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != _GSQ_MAGIC:
        if buf[:3] == _GSQ_MAGIC[:3]:
            raise FormatError(f"unsupported GRIDSEQ version marker {buf[:4]!r}", offset=0)
        raise FormatError(f"bad magic {buf[:4]!r}, expected {_GSQ_MAGIC!r}", offset=0)
    if len(buf) < 4 + _GSQ_HEADER.size:
        raise FormatError("truncated header", offset=len(buf))
    n, t, n_el, h, w, lab_h, lab_w, num_classes = _GSQ_HEADER.unpack_from(buf, 4)
    if n_el != 4:
        raise FormatError(f"expected 4 elements per step, got {n_el}", offset=12)
    if num_classes < 2:
        raise FormatError(f"invalid class count {num_classes}", offset=32)
    if min(n, t, h, w, lab_h, lab_w) < 1:
        raise FormatError("zero extent in header", offset=4)

    sample_bytes = t * n_el * h * w * 8 + lab_h * lab_w
    expected = 4 + _GSQ_HEADER.size + n * sample_bytes
    if len(buf) != expected:
        raise FormatError(
            f"expected {expected} bytes for {n} samples, got {len(buf)}",
            offset=min(expected, len(buf)))

    record = np.dtype([("elements", "<f8", (t, n_el, h, w)),
                       ("label", "u1", (lab_h, lab_w))])
    records = np.frombuffer(buf, dtype=record, count=n, offset=4 + _GSQ_HEADER.size)
    labels = np.ascontiguousarray(records["label"])
    if labels.max(initial=0) >= num_classes:
        bad = int(np.argmax(labels.reshape(n, -1).max(axis=1) >= num_classes))
        raise FormatError(
            f"sample {bad} has label id >= {num_classes}",
            offset=4 + _GSQ_HEADER.size + bad * sample_bytes + t * n_el * h * w * 8)
    return GridSequenceDataset(elements=np.ascontiguousarray(records["elements"]),
                               labels=labels, num_classes=num_classes)


# -- heatmap export ----------------------------------------------------------

def export_heatmap(grid, path, num_classes=None):
    """Write a grid as a binary PPM (P6) image.

    Integer grids (or ``num_classes`` given) use the fixed class palette;
    real grids are rendered as min-max grayscale.
    """
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValidationError(f"heatmap grid must be 2-D, got rank {grid.ndim}")
    if not np.isfinite(grid).all():
        raise ValidationError("heatmap grid must be finite")
    h, w = grid.shape
    if np.issubdtype(grid.dtype, np.integer) or num_classes is not None:
        ids = grid.astype(np.intp)
        limit = num_classes if num_classes is not None else len(HEATMAP_PALETTE)
        if ids.min() < 0 or ids.max() >= min(limit, len(HEATMAP_PALETTE)):
            raise ValidationError("class id outside the palette range")
        rgb = np.asarray(HEATMAP_PALETTE, dtype=np.uint8)[ids]
    else:
        lo, hi = grid.min(), grid.max()
        level = np.zeros_like(grid) if hi == lo else (grid - lo) / (hi - lo)
        gray = np.round(255 * level).astype(np.uint8)
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(rgb.tobytes())
    except OSError as exc:
        raise OSError(f"failed writing heatmap {path}: {exc}") from exc
