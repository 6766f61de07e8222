"""Multi-scale deconstructed ConvLSTM toolkit.

A self-contained recurrent-network library: five ConvLSTM-family cell
variants with exact parameter accounting, a from-scratch reverse-mode tape,
an encoder-decoder rainfall forecaster, a synthetic spatiotemporal dataset,
and a CLI covering counting, gradient checks, benchmarking, data generation,
training, and evaluation.
"""

import os as _os

# Cap BLAS intra-op threads before NumPy loads anything; per-output-element
# reductions stay sequential either way, so results never depend on this.
_threads = _os.environ.get("MSDLSTM_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from . import backend, ops  # noqa: E402
from .cells import (Cell, CellConfig, CellParams, CellState, CellVariant,  # noqa: E402
                    mconv, param_count_enumerated, param_count_formula)
from .data import (GridSequenceDataset, GridSequenceSample, classify_grid,  # noqa: E402
                   export_heatmap, generate_synthetic, precip_to_class,
                   read_gridseq, write_gridseq)
from .gradcheck import gradcheck  # noqa: E402
from .metrics import ConfusionMatrix, accuracy, collapse_binary, mean_iou  # noqa: E402
from .model import EncoderConfig, Forecaster, ModelConfig  # noqa: E402
from .optim import Adamax  # noqa: E402
from .tensor import Parameter, Tape, Tensor, backward  # noqa: E402
from .training import (evaluate, evaluate_persistence, persistence_baseline,  # noqa: E402
                       train_forecaster)

__version__ = "0.1.0"

__all__ = [
    "Adamax", "Cell", "CellConfig", "CellParams", "CellState", "CellVariant",
    "ConfusionMatrix", "EncoderConfig", "Forecaster", "GridSequenceDataset",
    "GridSequenceSample", "ModelConfig", "Parameter", "Tape", "Tensor",
    "accuracy", "backend", "backward", "classify_grid", "collapse_binary",
    "evaluate", "evaluate_persistence", "export_heatmap", "generate_synthetic",
    "gradcheck", "mconv", "mean_iou", "ops", "param_count_enumerated",
    "param_count_formula", "persistence_baseline", "precip_to_class",
    "read_gridseq", "train_forecaster", "write_gridseq",
]
