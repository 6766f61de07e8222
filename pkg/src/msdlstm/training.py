"""Training loop, evaluation, and the persistence comparator.

Training is sample-by-sample (desk scale), deterministic given the seed, and
keeps the checkpoint of the epoch with the best validation mIoU.  Evaluation
may fan out over samples across threads (``MSDLSTM_THREADS``); confusion
counts are integers, so accumulation order cannot change the result.
"""

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_RAIN, _block_mean, classify_grid, rainfall_intensity
from .errors import TrainingDivergedError, ValidationError
from .metrics import ConfusionMatrix, accuracy, mean_iou
from .optim import Adamax
from .tensor import Tape


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_acc: float
    val_miou: float
    wall_ms: float


LOG_FIELDS = ("epoch", "train_loss", "val_acc", "val_miou", "wall_ms")


def persistence_baseline(sample, num_classes, rain_params=DEFAULT_RAIN):
    """Forecast that the last observed rainfall state persists unchanged.

    The rainfall observed over the interval ending at the final stored step
    is diagnosed from the second-to-last element state (the generator's
    rainfall function is causal by one step), block-averaged to the label
    grid, and discretized.
    """
    if sample.elements.shape[0] < 2:
        raise ValidationError("persistence needs at least two stored steps")
    q, a, u, v = sample.elements[-2]
    lab_h, lab_w = sample.label.shape
    mm = _block_mean(rainfall_intensity(q, a, u, v, rain_params), lab_h, lab_w)
    return classify_grid(mm, "binary" if num_classes == 2 else "five")


def _thread_count(max_threads=None):
    if max_threads is None:
        max_threads = int(os.environ.get("MSDLSTM_THREADS", "1"))
    return max(1, max_threads)


def evaluate(model, dataset, max_threads=None):
    """Confusion matrix of model predictions over a dataset."""
    threads = _thread_count(max_threads)

    def run(indices):
        cm = ConfusionMatrix(dataset.num_classes)
        for i in indices:
            sample = dataset[i]
            cm.update(sample.label, model.predict(sample.elements))
        return cm

    indices = range(len(dataset))
    if threads == 1 or len(dataset) < 2 * threads:
        return run(indices)
    chunks = np.array_split(np.asarray(indices), threads)
    total = ConfusionMatrix(dataset.num_classes)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for cm in pool.map(run, chunks):
            total.merge(cm)
    return total


def evaluate_persistence(dataset, rain_params=DEFAULT_RAIN):
    cm = ConfusionMatrix(dataset.num_classes)
    for i in range(len(dataset)):
        sample = dataset[i]
        cm.update(sample.label, persistence_baseline(sample, dataset.num_classes, rain_params))
    return cm


def train_forecaster(model, train_set, val_set, epochs, lr=2e-3, seed=0,
                     max_threads=None, progress=None):
    """Run Adamax training; returns (per-epoch log, best checkpoint bytes,
    best epoch index).  Best is by validation mIoU."""
    if epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {epochs}")
    optimizer = Adamax(model.named_parameters(), lr=lr)
    shuffle_rng = np.random.default_rng([seed, 0x5f5e])
    log = []
    best_miou = -1.0
    best_bytes = model.to_bytes()
    best_epoch = -1

    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        losses = np.empty(len(order))
        for step, idx in enumerate(order):
            sample = train_set[int(idx)]
            with Tape() as tape:
                loss = model.loss(sample.elements, sample.label)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError("non-finite training loss",
                                            epoch=epoch, step=step)
            tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            losses[step] = value
        cm = evaluate(model, val_set, max_threads=max_threads)
        row = EpochLog(epoch=epoch, train_loss=float(losses.mean()),
                       val_acc=accuracy(cm), val_miou=mean_iou(cm),
                       wall_ms=(time.perf_counter() - t0) * 1e3)
        log.append(row)
        if row.val_miou > best_miou:
            best_miou = row.val_miou
            best_bytes = model.to_bytes()
            best_epoch = epoch
        if progress is not None:
            progress(row)
    return log, best_bytes, best_epoch


def write_train_log(path, log):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for row in log:
            writer.writerow([row.epoch, f"{row.train_loss:.6f}", f"{row.val_acc:.6f}",
                             f"{row.val_miou:.6f}", f"{row.wall_ms:.1f}"])
