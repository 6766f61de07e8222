"""Forward-semantics tests for the primitive tensor ops.

Expected values are either trivially forced by the op's definition or frozen
from an independent brute-force computation noted inline.
"""

import numpy as np
import pytest

from msdlstm import ops
from msdlstm.errors import ShapeError, ValidationError
from msdlstm.tensor import Tensor


def t(data):
    return Tensor(np.asarray(data, dtype=np.float64))


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = t(rng.standard_normal((3, 5, 4)))
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        y = ops.conv2d(x, t(w))
        np.testing.assert_array_equal(y.data, x.data)

    def test_ones_kernel_counts_window(self):
        # Brute force over the zero-padded 3x3 window of an all-ones 1x5x5
        # input: corners see 4 ones, edges 6, interior 9.
        y = ops.conv2d(t(np.ones((1, 5, 5))), t(np.ones((1, 1, 3, 3))))
        assert y.data[0, 2, 2] == 9.0
        assert y.data[0, 0, 0] == 4.0
        assert y.data[0, 0, 2] == 6.0

    def test_zero_weight_bias_only(self):
        x = t(np.ones((2, 4, 4)))
        y = ops.conv2d(x, t(np.zeros((3, 2, 3, 3))), bias=t([1.5, -2.0, 0.25]))
        np.testing.assert_array_equal(y.data, np.broadcast_to(
            np.array([1.5, -2.0, 0.25])[:, None, None], (3, 4, 4)))

    def test_stride_two_halves_extent_by_ceil(self):
        y = ops.conv2d(t(np.ones((1, 7, 8))), t(np.ones((2, 1, 3, 3))), stride=2)
        assert y.shape == (2, 4, 4)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            ops.conv2d(t(np.ones((1, 4, 4))), t(np.ones((1, 1, 2, 2))))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv2d(t(np.ones((2, 4, 4))), t(np.ones((1, 3, 3, 3))))


class TestGlobalAvgPool:
    def test_constant(self):
        y = ops.global_avg_pool(t(np.full((3, 4, 5), 2.5)))
        np.testing.assert_array_equal(y.data, [2.5, 2.5, 2.5])

    def test_hand_mean(self):
        y = ops.global_avg_pool(t([[[1.0, 3.0], [5.0, 7.0]]]))
        assert y.data[0] == 4.0

    def test_per_channel_independence(self):
        x = np.stack([np.zeros((3, 3)), np.ones((3, 3))])
        np.testing.assert_array_equal(ops.global_avg_pool(t(x)).data, [0.0, 1.0])


class TestFullyConnected:
    def test_identity(self):
        x = t([1.0, -2.0, 3.0])
        y = ops.fully_connected(x, t(np.eye(3)), bias=t(np.zeros(3)))
        np.testing.assert_array_equal(y.data, x.data)

    def test_zero_weight_returns_bias(self):
        y = ops.fully_connected(t([5.0, 5.0]), t(np.zeros((3, 2))), bias=t([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(y.data, [1.0, 2.0, 3.0])

    def test_hand_product(self):
        y = ops.fully_connected(t([1.0, 1.0]), t([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(y.data, [3.0, 7.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ops.fully_connected(t([1.0, 2.0, 3.0]), t(np.zeros((2, 2))))


class TestPointwise:
    def test_sigmoid_zero(self):
        assert ops.sigmoid(t([0.0])).data[0] == 0.5

    def test_tanh_zero(self):
        assert ops.tanh(t([0.0])).data[0] == 0.0

    def test_sigmoid_saturation(self):
        assert abs(ops.sigmoid(t([40.0])).data[0] - 1.0) < 1e-12

    def test_strict_open_bounds(self):
        x = t(np.array([-1e6, -40.0, 0.0, 40.0, 1e6]))
        s = ops.sigmoid(x).data
        assert (s > 0).all() and (s < 1).all()
        th = ops.tanh(x).data
        assert (th > -1).all() and (th < 1).all()


class TestHadamard:
    def test_ones_identity(self):
        rng = np.random.default_rng(1)
        a = t(rng.standard_normal((2, 3, 3)))
        np.testing.assert_array_equal(ops.hadamard(a, t(np.ones((2, 3, 3)))).data, a.data)

    def test_zero_annihilates(self):
        a = t(np.ones((4,)))
        np.testing.assert_array_equal(ops.hadamard(a, t(np.zeros(4))).data, np.zeros(4))

    def test_hand_product(self):
        np.testing.assert_array_equal(ops.hadamard(t([1.0, 2.0]), t([3.0, 4.0])).data, [3.0, 8.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.hadamard(t(np.ones(3)), t(np.ones(4)))


class TestHadamardBroadcast:
    def test_unit_vector_replicates_map(self):
        m = t(np.arange(6.0).reshape(1, 2, 3))
        y = ops.hadamard_broadcast(t(np.ones(4)), m)
        for c in range(4):
            np.testing.assert_array_equal(y.data[c], m.data[0])

    def test_unit_map_replicates_vector(self):
        y = ops.hadamard_broadcast(t([2.0, -3.0]), t(np.ones((1, 2, 2))))
        np.testing.assert_array_equal(y.data[0], np.full((2, 2), 2.0))
        np.testing.assert_array_equal(y.data[1], np.full((2, 2), -3.0))

    def test_hand_outer_product(self):
        y = ops.hadamard_broadcast(t([2.0, 3.0]), t([[[1.0, 2.0]]]))
        np.testing.assert_array_equal(y.data, [[[2.0, 4.0]], [[3.0, 6.0]]])

    def test_multichannel_map_rejected(self):
        with pytest.raises(ShapeError):
            ops.hadamard_broadcast(t([1.0]), t(np.ones((2, 2, 2))))


class TestConcat:
    def test_single_part_unchanged(self):
        x = t(np.arange(12.0).reshape(3, 2, 2))
        np.testing.assert_array_equal(ops.concat_channels([x]).data, x.data)

    def test_ordering(self):
        a = t(np.zeros((2, 3, 3)))
        b = t(np.ones((6, 3, 3)))
        y = ops.concat_channels([a, b])
        assert y.shape == (8, 3, 3)
        np.testing.assert_array_equal(y.data[:2], a.data)
        np.testing.assert_array_equal(y.data[2:], b.data)

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(2)
        parts = [t(rng.standard_normal((c, 4, 5))) for c in (1, 3, 2)]
        y = ops.concat_channels(parts)
        offset = 0
        for p in parts:
            c = p.shape[0]
            assert y.data[offset:offset + c].tobytes() == p.data.tobytes()
            offset += c

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            ops.concat_channels([t(np.ones((1, 2, 2))), t(np.ones((1, 3, 2)))])


class TestBilinearUpsample:
    def test_constant_field(self):
        y = ops.bilinear_upsample(t(np.full((2, 3, 3), 7.0)), 9, 5)
        np.testing.assert_allclose(y.data, 7.0, atol=1e-12)
        assert y.shape == (2, 9, 5)

    def test_corner_aligned_row(self):
        # corner-aligned interpolation of [0, 1] to width 4
        y = ops.bilinear_upsample(t([[[0.0, 1.0]]]), 1, 4)
        np.testing.assert_allclose(y.data[0, 0], [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-15)

    def test_same_size_is_identity(self):
        rng = np.random.default_rng(3)
        x = t(rng.standard_normal((2, 4, 6)))
        np.testing.assert_array_equal(ops.bilinear_upsample(x, 4, 6).data, x.data)

    def test_downsampling_rejected(self):
        with pytest.raises(ValidationError):
            ops.bilinear_upsample(t(np.ones((1, 4, 4))), 3, 4)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = ops.softmax_cross_entropy(t(np.zeros((5, 3, 3))),
                                         np.zeros((3, 3), dtype=int))
        assert abs(loss.item() - np.log(5)) < 1e-12

    def test_saturated_logits(self):
        logits = np.zeros((4, 2, 2))
        logits[1] = 40.0
        loss = ops.softmax_cross_entropy(t(logits), np.full((2, 2), 1, dtype=int))
        assert loss.item() < 1e-12

    def test_matches_log_softmax_oracle(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((3, 4, 5))
        labels = rng.integers(0, 3, size=(4, 5))
        p = np.exp(logits) / np.exp(logits).sum(axis=0)
        assert np.abs(p.sum(axis=0) - 1.0).max() < 1e-6
        ii, jj = np.indices((4, 5))
        want = -np.log(p[labels, ii, jj]).mean()
        got = ops.softmax_cross_entropy(t(logits), labels).item()
        assert abs(got - want) < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((4, 3, 3))
        labels = rng.integers(0, 4, size=(3, 3))
        a = ops.softmax_cross_entropy(t(logits), labels).item()
        b = ops.softmax_cross_entropy(t(logits + 123.0), labels).item()
        assert abs(a - b) < 1e-9

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ValidationError):
            ops.softmax_cross_entropy(t(np.zeros((2, 2, 2))),
                                      np.full((2, 2), 2, dtype=int))


def test_pool_of_broadcast_recovers_vector():
    rng = np.random.default_rng(6)
    v = t(rng.standard_normal(5))
    y = ops.global_avg_pool(ops.hadamard_broadcast(v, t(np.ones((1, 7, 7)))))
    assert np.abs(y.data - v.data).max() <= 1e-12
