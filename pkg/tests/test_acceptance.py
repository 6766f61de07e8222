"""Acceptance suite: one test per release criterion, strictest tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion.  Criterion 5 trains two small models from scratch and dominates
the runtime (about ten minutes on one CPU core).
"""

import time

import numpy as np
import pytest

from msdlstm import ops
from msdlstm.bench import bench_variants
from msdlstm.cells import (Cell, CellConfig, CellState, CellVariant,
                           init_cell_params, param_count_enumerated,
                           param_count_formula)
from msdlstm.cli import _cell_check, _model_check
from msdlstm.data import generate_synthetic, read_gridseq, write_gridseq
from msdlstm.metrics import ConfusionMatrix, accuracy, mean_iou
from msdlstm.model import Forecaster, ModelConfig
from msdlstm.tensor import Tensor
from msdlstm.training import evaluate_persistence, train_forecaster

REFERENCE_COUNTS = {
    CellVariant.CONVLSTM: 3_391_488,
    CellVariant.FC: 1_130_496,
    CellVariant.SCONV: 867_744,
    CellVariant.DECONSTRUCTED: 1_150_368,
    CellVariant.MSD: 1_338_784,
}

# Documented seeds for the synthetic-task criterion: dataset seed 7,
# model/shuffle seed 0, lr 1e-2 (the optimizer's own default stays 2e-3).
TASK_SEED = 7
TRAIN_SEED = 0
TRAIN_LR = 1e-2


def _report(num, ok, detail):
    print(f"\ncriterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def test_criterion_1_reference_parameter_counts():
    """Exact per-variant weight counts at K=3, Cx=608, Ch=128."""
    t0 = time.perf_counter()
    for variant, want in REFERENCE_COUNTS.items():
        formula = param_count_formula(variant, 3, 608, 128)
        params = init_cell_params(CellConfig(variant, 3, 608, 128, 1, 1),
                                  np.random.default_rng(0))
        enumerated, _ = param_count_enumerated(params)
        assert formula == want == enumerated, (variant, formula, enumerated, want)
    elapsed = time.perf_counter() - t0
    _report(1, elapsed < 1.0,
            f"all five variants exact at the reference config ({elapsed:.2f}s < 1s)")


def test_criterion_2_closed_form_identities_on_random_configs():
    """Enumerated MSD and ConvLSTM counts match their closed forms, 50 configs."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(1234)
    for _ in range(50):
        k = int(rng.choice([3, 5, 7]))
        cx = int(rng.integers(1, 65))
        ch = int(rng.choice(np.arange(4, 65, 4)))
        s = cx + ch
        msd, _ = param_count_enumerated(init_cell_params(
            CellConfig(CellVariant.MSD, k, cx, ch, 1, 1), rng))
        assert msd == s * (k * k * (ch + 3) + 5 * ch), (k, cx, ch)
        vanilla, _ = param_count_enumerated(init_cell_params(
            CellConfig(CellVariant.CONVLSTM, k, cx, ch, 1, 1), rng))
        assert vanilla == k * k * s * ch * 4, (k, cx, ch)
    elapsed = time.perf_counter() - t0
    _report(2, elapsed < 5.0, f"50 random configs exact ({elapsed:.2f}s < 5s)")


def test_criterion_3_gradient_correctness():
    """Single-step gradcheck for all five variants and the full model, < 1e-4."""
    t0 = time.perf_counter()
    worst = 0.0
    for variant in CellVariant:
        report = _cell_check(variant, tol=1e-4, eps=1e-4, seed=0)
        assert report.passed, f"{variant.value}: {report.summary()}"
        worst = max(worst, report.max_rel_err)
    report = _model_check(tol=1e-4, eps=1e-4, seed=0)
    assert report.passed, report.summary()
    worst = max(worst, report.max_rel_err)
    elapsed = time.perf_counter() - t0
    _report(3, elapsed < 120.0,
            f"five variants + end-to-end model, max rel err {worst:.2e} < 1e-4 "
            f"({elapsed:.0f}s < 120s)")


def test_criterion_4_cell_state_invariants():
    """1000 randomized steps per variant: H in (-1,1), |C_t| <= |C_{t-1}|+1."""
    t0 = time.perf_counter()
    for variant in CellVariant:
        cell = Cell.create(CellConfig(variant, 3, 4, 8, 6, 6),
                           np.random.default_rng([variant.value.encode()[0], 0]))
        rng = np.random.default_rng([42, ord(variant.value[0])])
        state = cell.zero_state()
        for step in range(1000):
            if step % 100 == 0:  # fresh random state occasionally
                state = CellState(h=Tensor(rng.uniform(-0.99, 0.99, (8, 6, 6))),
                                  c=Tensor(3 * rng.standard_normal((8, 6, 6))))
            prev_c = np.abs(state.c.data)
            x = Tensor(3 * rng.standard_normal((4, 6, 6)))
            state = cell.step(x, state)
            assert (np.abs(state.h.data) < 1.0).all(), variant
            assert (np.abs(state.c.data) <= prev_c + 1.0).all(), variant
    elapsed = time.perf_counter() - t0
    _report(4, elapsed < 30.0,
            f"5000 randomized steps hold both invariants ({elapsed:.0f}s < 30s)")


@pytest.fixture(scope="module")
def synthetic_task_runs(tmp_path_factory):
    """The documented synthetic-task protocol: 600 samples (500 train /
    100 val), 32x32 grids, T=4, Ch=16, 20 epochs, one CPU core."""
    out = {}
    dataset = generate_synthetic(TASK_SEED, 600, t=4, height=32, width=32)
    train_set, val_set = dataset.split(100)
    out["persistence_acc"] = accuracy(evaluate_persistence(val_set))
    for variant in (CellVariant.MSD, CellVariant.SCONV):
        config = ModelConfig.build(32, 32, variant=variant, ch=16, t=4,
                                   num_classes=5)
        model = Forecaster.create(config, np.random.default_rng([TRAIN_SEED, 0xC0]))
        t0 = time.perf_counter()
        log, best, best_epoch = train_forecaster(
            model, train_set, val_set, epochs=20, lr=TRAIN_LR, seed=TRAIN_SEED)
        out[variant] = {
            "log": log,
            "minutes": (time.perf_counter() - t0) / 60.0,
            "best_miou": log[best_epoch].val_miou,
            "final_acc": log[-1].val_acc,
        }
    return out


def test_criterion_5a_training_loss_decreases(synthetic_task_runs):
    log = synthetic_task_runs[CellVariant.MSD]["log"]
    drops = sum(log[i + 1].train_loss < log[i].train_loss for i in range(5))
    minutes = synthetic_task_runs[CellVariant.MSD]["minutes"]
    _report("5a", drops >= 4 and minutes <= 15.0,
            f"loss fell in {drops}/5 early transitions; run took {minutes:.1f} min <= 15")


def test_criterion_5b_beats_persistence(synthetic_task_runs):
    final = synthetic_task_runs[CellVariant.MSD]["final_acc"]
    base = synthetic_task_runs["persistence_acc"]
    _report("5b", final >= base + 0.05,
            f"final val acc {final:.4f} vs persistence {base:.4f} "
            f"(margin {final - base:+.4f} >= 0.05)")


def test_criterion_5c_msd_not_worse_than_sconv(synthetic_task_runs):
    msd = synthetic_task_runs[CellVariant.MSD]["best_miou"]
    sconv = synthetic_task_runs[CellVariant.SCONV]["best_miou"]
    _report("5c", msd >= sconv,
            f"msd val mIoU {msd:.4f} >= sconv val mIoU {sconv:.4f}")


def test_criterion_6_runtime_ordering():
    """At Ch=128, 32x32: the msd step is faster than the convlstm step."""
    rows = bench_variants(k=3, cx=64, ch=128, height=32, width=32,
                          iters=30, warmup=5, seed=0)
    times = {r.variant: r.mean_ms for r in rows}
    detail = ", ".join(f"{r.variant}={r.mean_ms:.1f}ms" for r in rows)
    _report(6, times["msd"] < times["convlstm"], f"reported timings: {detail}")


def test_criterion_7_format_round_trips(tmp_path):
    t0 = time.perf_counter()
    ds = generate_synthetic(99, 7, t=3, height=16, width=20)
    path = tmp_path / "rt.gsq"
    write_gridseq(path, ds)
    back = read_gridseq(path)
    assert back.elements.tobytes() == ds.elements.tobytes()
    assert back.labels.tobytes() == ds.labels.tobytes()

    rng = np.random.default_rng(5)
    for variant in CellVariant:
        config = ModelConfig.build(16, 16, variant=variant, ch=8, t=2,
                                   num_classes=5)
        model = Forecaster.create(config, rng)
        for _, p in model.named_parameters():
            p.data[...] = rng.standard_normal(p.data.shape)
        blob = model.to_bytes()
        assert Forecaster.from_bytes(blob).to_bytes() == blob
    elapsed = time.perf_counter() - t0
    _report(7, elapsed < 10.0,
            f"GRIDSEQ and checkpoints bit-exact on randomized payloads "
            f"({elapsed:.1f}s < 10s)")


def test_criterion_8_metric_oracles():
    perfect = ConfusionMatrix(3).update([0, 1, 2, 2], [0, 1, 2, 2])
    assert accuracy(perfect) == 1.0 and mean_iou(perfect) == 1.0

    truth = np.array([0] * 50 + [1] * 50)
    cm = ConfusionMatrix(2).update(truth, np.zeros(100, dtype=int))
    assert accuracy(cm) == 0.5
    assert mean_iou(cm) == 0.25

    partial = ConfusionMatrix(4).update([0, 0, 1], [0, 1, 1])
    # class 2 and 3 absent from truth and prediction -> excluded
    assert mean_iou(partial) == pytest.approx((0.5 + 0.5) / 2)
    _report(8, True, "hand confusion-matrix cases exact, incl. the 0.25 mIoU case")
