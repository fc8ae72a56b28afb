import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepset import ops
from sleepset.errors import NumericalError, ShapeError
from sleepset.tensor import Tensor


def t(data, dtype=np.float64):
    return Tensor(np.asarray(data, dtype=dtype))


def naive_conv1d(x, w, b, dilation=1):
    """Direct same-padded correlation, the independent oracle."""
    batch, c_in, length = x.shape
    c_out, _, kernel = w.shape
    pad = (kernel - 1) // 2 * dilation
    y = np.zeros((batch, c_out, length), dtype=np.float64)
    for bi in range(batch):
        for co in range(c_out):
            for pos in range(length):
                acc = b[co]
                for ci in range(c_in):
                    for tap in range(kernel):
                        src = pos + tap * dilation - pad
                        if 0 <= src < length:
                            acc += w[co, ci, tap] * x[bi, ci, src]
                y[bi, co, pos] = acc
    return y


class TestConv1d:
    def test_identity_kernel(self):
        y = ops.conv1d(t([[[1, 2, 3, 4]]]), t([[[0, 1, 0]]]), t([0.0]))
        np.testing.assert_array_equal(y.numpy().ravel(), [1, 2, 3, 4])

    def test_box_kernel_zero_padding(self):
        y = ops.conv1d(t([[[1, 1, 1, 1]]]), t([[[1, 1, 1]]]), t([0.0]))
        np.testing.assert_array_equal(y.numpy().ravel(), [2, 3, 3, 2])

    def test_dilated_box_kernel(self):
        y = ops.conv1d(t([[[1, 2, 3, 4, 5]]]), t([[[1, 1, 1]]]), t([0.0]),
                       dilation=2)
        np.testing.assert_array_equal(y.numpy().ravel(), [4, 6, 9, 6, 8])

    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_matches_naive_oracle(self, dilation):
        rng = np.random.default_rng(41 + dilation)
        x = rng.normal(size=(2, 3, 17))
        w = rng.normal(size=(4, 3, 3))
        b = rng.normal(size=4)
        got = ops.conv1d(t(x), t(w), t(b), dilation=dilation).numpy()
        np.testing.assert_allclose(got, naive_conv1d(x, w, b, dilation),
                                   rtol=1e-10, atol=1e-12)

    def test_output_length_preserved(self):
        rng = np.random.default_rng(0)
        y = ops.conv1d(t(rng.normal(size=(1, 2, 20))),
                       t(rng.normal(size=(5, 2, 7))), t(np.zeros(5)),
                       dilation=2)
        assert y.shape == (1, 5, 20)

    def test_linearity(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 12))
        y = rng.normal(size=(1, 2, 12))
        w = rng.normal(size=(3, 2, 3))
        zero = t(np.zeros(3))
        a, b = 0.7, -1.3
        combined = ops.conv1d(t(a * x + b * y), t(w), zero).numpy()
        separate = a * ops.conv1d(t(x), t(w), zero).numpy() + \
            b * ops.conv1d(t(y), t(w), zero).numpy()
        np.testing.assert_allclose(combined, separate, rtol=1e-6, atol=1e-9)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv1d(t(np.ones((1, 2, 8))), t(np.ones((3, 4, 3))),
                       t(np.zeros(3)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv1d(t(np.ones((1, 1, 8))), t(np.ones((1, 1, 4))),
                       t(np.zeros(1)))

    def test_kernel_span_exceeding_length_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv1d(t(np.ones((1, 1, 4))), t(np.ones((1, 1, 3))),
                       t(np.zeros(1)), dilation=2)


class TestMaxpool:
    def test_windowed_max(self):
        y = ops.maxpool1d(t([[[1, 3, 2, 5]]]))
        np.testing.assert_array_equal(y.numpy().ravel(), [3, 5])

    def test_constant_input(self):
        y = ops.maxpool1d(t(np.full((1, 2, 6), 4.25)))
        assert y.shape == (1, 2, 3)
        assert (y.numpy() == 4.25).all()

    def test_edges(self):
        y = ops.maxpool1d(t([[[5, 1, 1, 5]]]))
        np.testing.assert_array_equal(y.numpy().ravel(), [5, 5])

    def test_tie_routes_gradient_to_first_index(self):
        x = Tensor(np.array([[[2.0, 2.0, 1.0, 3.0]]]), requires_grad=True)
        ops.maxpool1d(x).sum().backward()
        np.testing.assert_array_equal(x.grad.ravel(), [1, 0, 0, 1])

    def test_odd_length_rejected(self):
        with pytest.raises(ShapeError):
            ops.maxpool1d(t(np.ones((1, 1, 5))))


class TestAffine:
    def test_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        y = ops.affine(t(x), t(np.eye(3)), t(np.zeros(3)))
        np.testing.assert_array_equal(y.numpy(), x)

    def test_hand_matrix_product(self):
        y = ops.affine(t([2.0, 3.0]), t([[1.0], [1.0]]), t([1.0]))
        np.testing.assert_array_equal(y.numpy(), [6.0])

    def test_zero_weights_broadcast_bias(self):
        y = ops.affine(t(np.ones((4, 2))), t(np.zeros((2, 3))),
                       t([5.0, 6.0, 7.0]))
        np.testing.assert_array_equal(y.numpy(), np.tile([5, 6, 7], (4, 1)))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.affine(t(np.ones((2, 3))), t(np.ones((4, 2))), t(np.zeros(2)))

    def test_leading_dims_independent(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 3))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=4)
        batched = ops.affine(t(x), t(w), t(b)).numpy()
        for i in range(2):
            np.testing.assert_allclose(
                batched[i], ops.affine(t(x[i]), t(w), t(b)).numpy())


class TestGelu:
    def test_zero(self):
        assert ops.gelu(t([0.0])).item() == 0.0

    def test_one_is_normal_cdf(self):
        # 1 * Phi(1)
        expected = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert abs(ops.gelu(t([1.0])).item() - expected) < 1e-12
        assert abs(ops.gelu(t([1.0])).item() - 0.84134) < 1e-5

    def test_large_negative_vanishes(self):
        assert abs(ops.gelu(t([-10.0])).item()) < 1e-6


class TestNorms:
    def test_instance_norm_moments(self):
        rng = np.random.default_rng(0)
        x = rng.normal(2.0, 3.0, size=(2, 3, 64))
        y = ops.instance_norm(t(x)).numpy()
        assert np.abs(y.mean(axis=-1)).max() < 1e-5
        assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-4

    def test_instance_norm_constant_slice_is_zero(self):
        y = ops.instance_norm(t(np.full((1, 2, 8), 3.0))).numpy()
        np.testing.assert_array_equal(y, np.zeros((1, 2, 8)))

    def test_instance_norm_two_point_slice(self):
        y = ops.instance_norm(t([[[1.0, 3.0]]])).numpy().ravel()
        np.testing.assert_allclose(y, [-1.0, 1.0], atol=1e-4)

    def test_layer_norm_two_point_vector(self):
        y = ops.layer_norm(t([[1.0, 3.0]])).numpy().ravel()
        np.testing.assert_allclose(y, [-1.0, 1.0], atol=1e-4)

    def test_layer_norm_constant_vector_is_zero(self):
        y = ops.layer_norm(t(np.full((3, 5), 2.5))).numpy()
        np.testing.assert_array_equal(y, np.zeros((3, 5)))

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_layer_norm_moments_property(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.5, 4.0),
                       size=(3, 32))
        y = ops.layer_norm(t(x)).numpy()
        assert np.abs(y.mean(axis=-1)).max() < 1e-5
        assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-4

    def test_gain_bias_applied(self):
        x = t([[1.0, 3.0]])
        y = ops.layer_norm(x, t([2.0, 2.0]), t([1.0, 1.0])).numpy().ravel()
        np.testing.assert_allclose(y, [-1.0, 3.0], atol=1e-4)


def identity_attention_params(d, dtype=np.float64):
    eye = np.eye(d, dtype=dtype)
    zero = np.zeros(d, dtype=dtype)
    return {"wq": Tensor(eye), "bq": Tensor(zero),
            "wk": Tensor(eye), "bk": Tensor(zero),
            "wv": Tensor(eye), "bv": Tensor(zero),
            "wo": Tensor(eye), "bo": Tensor(zero)}


class TestAttention:
    def test_identical_values_give_that_value(self):
        rng = np.random.default_rng(0)
        d = 8
        v = rng.normal(size=d)
        x = rng.normal(size=(5, d))
        values = np.tile(v, (5, 1))
        out = ops.masked_multi_head_attention(
            t(x), t(x), t(values), 2, None, identity_attention_params(d))
        np.testing.assert_allclose(out.numpy(), values, rtol=1e-10,
                                   atol=1e-12)

    def test_single_token_identity_projection(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 4))
        out = ops.masked_multi_head_attention(
            t(x), t(x), t(x), 2, None, identity_attention_params(4))
        np.testing.assert_allclose(out.numpy(), x, rtol=1e-12)

    def test_mask_equals_deletion(self):
        rng = np.random.default_rng(2)
        d, tokens = 8, 5
        x = rng.normal(size=(tokens, d))
        params = identity_attention_params(d)
        excluded = 3
        allowed = np.ones((tokens, tokens), dtype=bool)
        allowed[:, excluded] = False
        masked = ops.masked_multi_head_attention(
            t(x), t(x), t(x), 2, ops.AttentionMask(allowed), params).numpy()
        deleted_in = np.delete(x, excluded, axis=0)
        deleted = ops.masked_multi_head_attention(
            t(deleted_in), t(deleted_in), t(deleted_in), 2, None,
            params).numpy()
        kept_rows = [i for i in range(tokens) if i != excluded]
        np.testing.assert_allclose(masked[kept_rows], deleted,
                                   rtol=1e-9, atol=1e-12)

    def test_masked_key_content_is_irrelevant_bitwise(self):
        rng = np.random.default_rng(3)
        d, tokens = 8, 4
        x = rng.normal(size=(tokens, d)).astype(np.float32)
        params = {k: Tensor(v.data.astype(np.float32))
                  for k, v in identity_attention_params(d).items()}
        allowed = np.ones((tokens, tokens), dtype=bool)
        allowed[:, 2] = False
        base = ops.masked_multi_head_attention(
            Tensor(x), Tensor(x), Tensor(x), 2,
            ops.AttentionMask(allowed), params).numpy()
        for scale in (0.0, 17.0, -403.0):
            rewritten = x.copy()
            rewritten[2] = scale * rng.normal(size=d).astype(np.float32)
            got = ops.masked_multi_head_attention(
                Tensor(rewritten), Tensor(rewritten), Tensor(rewritten), 2,
                ops.AttentionMask(allowed), params).numpy()
            np.testing.assert_array_equal(got[[0, 1, 3]], base[[0, 1, 3]])

    def test_fully_masked_query_row_rejected(self):
        with pytest.raises(ShapeError):
            ops.AttentionMask(np.zeros((3, 3), dtype=bool))

    def test_heads_must_divide_dim(self):
        x = t(np.ones((2, 6)))
        with pytest.raises(ShapeError):
            ops.masked_multi_head_attention(
                x, x, x, 4, None, identity_attention_params(6))


class TestSoftmaxCrossEntropy:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        y = ops.softmax(t(rng.normal(size=(6, 4)) * 10.0)).numpy()
        np.testing.assert_allclose(y.sum(axis=-1), np.ones(6), atol=1e-6)

    def test_peaked_logits_vanishing_loss(self):
        logits = np.full((1, 4), -30.0)
        logits[0, 2] = 30.0
        onehot = np.eye(4)[[2]]
        assert ops.softmax_cross_entropy(t(logits), onehot).item() < 1e-6

    def test_uniform_logits_ln4(self):
        loss = ops.softmax_cross_entropy(t(np.zeros((1, 4))), np.eye(4)[[1]])
        assert abs(loss.item() - math.log(4.0)) < 1e-6

    def test_hand_softmax_example(self):
        loss = ops.softmax_cross_entropy(t([[1.0, 0.0, 0.0, 0.0]]),
                                         np.eye(4)[[0]])
        expected = math.log(1.0 + 3.0 * math.exp(-1.0))
        assert abs(loss.item() - expected) < 1e-9
        assert abs(loss.item() - 0.74367) < 1e-5

    def test_sum_not_mean_over_epochs(self):
        logits = np.zeros((3, 4))
        onehot = np.eye(4)[[0, 1, 2]]
        loss = ops.softmax_cross_entropy(t(logits), onehot)
        assert abs(loss.item() - 3.0 * math.log(4.0)) < 1e-6

    def test_ignored_epochs_contribute_exactly_zero(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(4, 4))
        onehot = np.eye(4)[[0, 1, 2, 3]]
        keep = np.array([True, False, True, False])
        masked_onehot = onehot * keep[:, None]
        full = ops.softmax_cross_entropy(t(logits[keep]), onehot[keep]).item()
        got = ops.softmax_cross_entropy(t(logits), masked_onehot, keep).item()
        assert got == pytest.approx(full, rel=1e-12)

    def test_non_finite_logits_rejected(self):
        logits = np.zeros((1, 4))
        logits[0, 0] = np.nan
        with pytest.raises(NumericalError):
            ops.softmax_cross_entropy(t(logits), np.eye(4)[[0]])
