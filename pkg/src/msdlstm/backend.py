"""Selection between the compiled conv kernels and the NumPy fallback.

The compiled extension is picked at import when available.  The choice can be
forced with ``MSDLSTM_BACKEND`` (``auto``, ``compiled``, ``python``) or changed
at runtime with :func:`use_backend` (the benchmark uses this to compare both).
``MSDLSTM_THREADS``, when set, caps BLAS intra-op threads; reductions per
output element stay sequential, so results do not depend on the thread count.
"""

import os

from . import _kernels_py
from .errors import ValidationError

try:
    from . import _convkernels as _compiled
except ImportError:  # pragma: no cover - depends on build environment
    _compiled = None

_BACKENDS = {}
_BACKENDS["python"] = _kernels_py
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active_name = None
_active = None


def available_backends():
    return tuple(sorted(_BACKENDS))


def use_backend(name):
    """Select the kernel backend; returns the previously active name."""
    global _active_name, _active
    if name == "auto":
        name = "compiled" if "compiled" in _BACKENDS else "python"
    if name not in _BACKENDS:
        raise ValidationError(
            f"backend {name!r} not available (have {', '.join(available_backends())})"
        )
    previous = _active_name
    _active_name = name
    _active = _BACKENDS[name]
    return previous


def backend_name():
    return _active_name


def _impl_for(arr):
    # the compiled kernels are double-only; single precision (opt-in via
    # MSDLSTM_DTYPE) always runs on the NumPy path
    import numpy as np
    return _active if arr.dtype == np.float64 else _kernels_py


def conv2d_forward(x, w, stride=1):
    return _impl_for(x).conv2d_forward(x, w, stride)


def conv2d_backward_input(gy, w, stride, h, wdt):
    return _impl_for(gy).conv2d_backward_input(gy, w, stride, h, wdt)


def conv2d_backward_weight(x, gy, stride, k):
    return _impl_for(x).conv2d_backward_weight(x, gy, stride, k)


use_backend(os.environ.get("MSDLSTM_BACKEND", "auto"))
