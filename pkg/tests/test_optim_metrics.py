"""Adamax update rule and the confusion-matrix metrics."""

import numpy as np
import pytest

from msdlstm.errors import NumericError, ValidationError
from msdlstm.metrics import ConfusionMatrix, accuracy, collapse_binary, mean_iou
from msdlstm.optim import Adamax
from msdlstm.tensor import Parameter


def make_param(values):
    return Parameter(np.asarray(values, dtype=float), name="p")


class TestAdamax:
    def test_first_step_is_signed_lr(self):
        # After one step: m-hat = g and u = |g|, so the update is
        # -lr * g / (|g| + eps), i.e. about -lr * sign(g).
        p = make_param([1.0, -1.0, 2.0])
        g = np.array([0.3, -0.2, 0.9])
        opt = Adamax([("p", p)], lr=1e-2)
        p.grad[...] = g
        opt.step()
        np.testing.assert_allclose(p.data, np.array([1.0, -1.0, 2.0])
                                   - 1e-2 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_zero_gradient_is_fixed_point(self):
        p = make_param([0.5, -0.5])
        opt = Adamax([("p", p)])
        for _ in range(10):
            opt.step()
        np.testing.assert_array_equal(p.data, [0.5, -0.5])

    def test_deterministic_trajectories(self):
        def run():
            rng = np.random.default_rng(3)
            p = make_param(rng.standard_normal(5))
            opt = Adamax([("p", p)], lr=3e-3)
            for _ in range(25):
                p.grad[...] = rng.standard_normal(5)
                opt.step()
            return p.data.tobytes()

        assert run() == run()

    def test_infinity_accumulator_nondecreasing_under_constant_magnitude(self):
        p = make_param(np.zeros(4))
        opt = Adamax([("p", p)])
        g = np.array([1.0, -1.0, 0.5, -0.5])
        prev = np.zeros(4)
        for i in range(20):
            p.grad[...] = g * (-1) ** i  # constant |g|
            opt.step()
            u = opt._u[0]
            assert (u >= prev).all() and (u >= 0).all()
            prev = u.copy()

    def test_step_magnitude_bound(self):
        # |delta| <= lr / (1 - beta1^t) for any gradient history
        rng = np.random.default_rng(4)
        p = make_param(np.zeros(8))
        opt = Adamax([("p", p)], lr=5e-3)
        for t in range(1, 30):
            before = p.data.copy()
            p.grad[...] = rng.standard_normal(8) * 10.0 ** rng.integers(-3, 3)
            opt.step()
            bound = 5e-3 / (1 - 0.9 ** t) + 1e-12
            assert (np.abs(p.data - before) <= bound).all()

    def test_nonfinite_gradient_rejected_with_name(self):
        p = make_param([1.0])
        p.name = "enc.w"
        opt = Adamax([("enc.w", p)])
        p.grad[...] = np.nan
        with pytest.raises(NumericError, match="enc.w"):
            opt.step()


class TestMetrics:
    def test_perfect_prediction(self):
        cm = ConfusionMatrix(3).update([0, 1, 2, 2], [0, 1, 2, 2])
        assert accuracy(cm) == 1.0
        assert mean_iou(cm) == 1.0

    def test_half_half_all_zero_prediction(self):
        # truth half class 0, half class 1; prediction all class 0:
        # acc = 0.5; IoU_0 = 0.5, IoU_1 = 0 -> mIoU = 0.25
        truth = np.array([0] * 50 + [1] * 50)
        pred = np.zeros(100, dtype=int)
        cm = ConfusionMatrix(2).update(truth, pred)
        assert accuracy(cm) == 0.5
        assert mean_iou(cm) == 0.25

    def test_absent_class_excluded_from_miou(self):
        cm = ConfusionMatrix(3).update([0, 0, 1, 1], [0, 0, 1, 0])
        # class 2 never appears in truth or prediction -> excluded
        iou0 = 2 / 3
        iou1 = 1 / 2
        assert mean_iou(cm) == pytest.approx((iou0 + iou1) / 2)

    def test_relabeling_equivariance(self):
        rng = np.random.default_rng(5)
        truth = rng.integers(0, 4, size=500)
        pred = rng.integers(0, 4, size=500)
        perm = np.array([2, 0, 3, 1])
        a = ConfusionMatrix(4).update(truth, pred)
        b = ConfusionMatrix(4).update(perm[truth], perm[pred])
        assert accuracy(a) == accuracy(b)
        assert mean_iou(a) == pytest.approx(mean_iou(b))

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValidationError):
            accuracy(ConfusionMatrix(2))
        with pytest.raises(ValidationError):
            mean_iou(ConfusionMatrix(2))

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(ValidationError):
            ConfusionMatrix(2).update([0, 2], [0, 0])

    def test_binary_collapse(self):
        cm = ConfusionMatrix(5)
        cm.update([0, 0, 1, 2, 3, 4], [0, 2, 0, 2, 4, 0])
        folded = collapse_binary(cm)
        assert folded.counts.tolist() == [[1, 1], [2, 2]]
        assert folded.total == cm.total
