"""Wall-time benchmark of a single forward cell step per variant.

Timings are hardware-bound and only ever *reported*; the one portable claim
worth asserting is relative: the multi-scale deconstructed cell does strictly
less gate arithmetic than the original full-conv cell, so its step must come
out faster at equal configuration.  The backend column makes the compiled
kernels directly comparable against the NumPy fallback.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import backend
from .cells import Cell, CellConfig, CellVariant, param_count_formula
from .tensor import Tensor

BENCH_FIELDS = ("variant", "backend", "param_count", "mean_ms", "std_ms")


@dataclass
class BenchRow:
    variant: str
    backend: str
    param_count: int
    mean_ms: float
    std_ms: float


def bench_step(config, iters=30, warmup=5, seed=0):
    """Mean/stddev wall time (ms) of one forward step at the given config."""
    rng = np.random.default_rng(seed)
    cell = Cell.create(config, rng)
    x = Tensor(rng.standard_normal((config.cx, config.height, config.width)))
    state = cell.zero_state()
    state = cell.step(x, state)  # realistic nonzero state
    for _ in range(warmup):
        cell.step(x, state)
    times = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter()
        cell.step(x, state)
        times[i] = (time.perf_counter() - t0) * 1e3
    return float(times.mean()), float(times.std())


def bench_variants(k=3, cx=64, ch=128, height=32, width=32, iters=30, warmup=5,
                   seed=0, backends=("auto",)):
    rows = []
    previous = backend.backend_name()
    try:
        for name in backends:
            backend.use_backend(name)
            active = backend.backend_name()
            for variant in CellVariant:
                cfg = CellConfig(variant, k, cx, ch, height, width)
                mean_ms, std_ms = bench_step(cfg, iters=iters, warmup=warmup, seed=seed)
                rows.append(BenchRow(variant.value, active,
                                     param_count_formula(variant, k, cx, ch),
                                     mean_ms, std_ms))
    finally:
        backend.use_backend(previous)
    return rows
