"""Exception hierarchy shared by all modules.

The CLI maps these onto distinct process exit codes (see ``msdlstm.cli``).
"""


class MsdlstmError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MsdlstmError):
    """Invalid configuration or argument combination."""


class ShapeError(ValidationError):
    """Operands with incompatible extents."""

    def __init__(self, message, expected=None, actual=None):
        if expected is not None or actual is not None:
            message = f"{message} (expected {expected}, got {actual})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class NumericError(MsdlstmError):
    """Non-finite value produced by an identified operation."""

    def __init__(self, message, op=None):
        if op is not None:
            message = f"[{op}] {message}"
        super().__init__(message)
        self.op = op


class TrainingDivergedError(NumericError):
    """Non-finite loss during training; carries epoch/step context."""

    def __init__(self, message, epoch, step):
        super().__init__(f"{message} (epoch {epoch}, step {step})", op="train")
        self.epoch = epoch
        self.step = step


class TapeError(MsdlstmError):
    """Misuse of the recording tape (e.g. backward replayed twice)."""


class FormatError(MsdlstmError):
    """Malformed serialized payload; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointMismatchError(ValidationError):
    """Checkpoint incompatible with the dataset or requested configuration."""
