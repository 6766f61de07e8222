"""Dense float64 tensors, trainable parameters, and the recording tape.

Values are immutable by convention after construction; the only sanctioned
mutation is ``Parameter.grad`` (written by backward, cleared by ``zero_grad``)
and ``Parameter.data`` (written by an optimizer step).  One tape records one
forward pass and can replay it backward exactly once.  Ops executed with no
active tape compute forward only, which is how inference and finite-difference
probes run.
"""

import os
import threading

import numpy as np

from .errors import TapeError

DTYPE = np.dtype(os.environ.get("MSDLSTM_DTYPE", "float64"))


class Tensor:
    """A dense array value; rank 1 (vectors) or rank 3 (channels, h, w) in
    model code, rank 0 for losses, arbitrary rank inside parameters."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape, dtype=DTYPE))

    @classmethod
    def full(cls, shape, value):
        return cls(np.full(shape, value, dtype=DTYPE))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A tensor with a persistently allocated, accumulating gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name=None):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.data.shape})"


_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitive ops, replayed strictly in reverse.

    Use as a context manager around one forward pass::

        with Tape() as tape:
            loss = model_loss(...)
        tape.backward(loss)
    """

    __slots__ = ("_records", "_produced", "_consumed")

    def __init__(self):
        self._records = []
        self._produced = set()
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape context exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out, inputs, backward_fn):
        out.grad = None  # fresh output; drop any stale gradient
        self._records.append((out, inputs, backward_fn))
        self._produced.add(id(out))

    def backward(self, loss):
        """Accumulate d(loss)/d(p) into every Parameter touched by the pass."""
        if self._consumed:
            raise TapeError("backward already ran on this tape; record a new forward pass")
        if id(loss) not in self._produced:
            raise TapeError("loss was not produced by a forward pass recorded on this tape")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._records):
            gy = out.grad
            if gy is None:
                continue  # output never influenced the loss
            grads = backward_fn(gy)
            for inp, g in zip(inputs, grads):
                if g is None:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += g
                elif id(inp) in self._produced:
                    inp.grad = g if inp.grad is None else inp.grad + g


def backward(tape, loss):
    """Functional alias for ``tape.backward(loss)``."""
    tape.backward(loss)
