import numpy as np
import pytest

from sleepset import tensor as T
from sleepset.errors import ShapeError
from sleepset.tensor import Tensor, no_grad


def test_sum_of_squares_gradient_is_exact():
    x = Tensor(np.array([1.0, -2.0, 3.5, 0.0]), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, 2.0 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_gradient_accumulates_across_backward_calls():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * x).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, [4.0 + 3.0])


def test_shared_node_gets_both_contributions():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * 2.0
    (y * y + y).sum().backward()  # d/dx (4x^2 + 2x) = 8x + 2
    np.testing.assert_allclose(x.grad, [8.0 * 3.0 + 2.0])


def test_broadcast_add_unbroadcasts_gradient():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, 3.0 * np.ones(4))


def test_matmul_shape_mismatch_rejected():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        a @ b


def test_mixed_dtypes_rejected():
    a = Tensor(np.ones(3, dtype=np.float32))
    b = Tensor(np.ones(3, dtype=np.float64))
    with pytest.raises(TypeError):
        a + b


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert y._parents == ()


def test_detach_breaks_the_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * 2.0).detach()
    assert not y.requires_grad
    (Tensor(np.ones(3), requires_grad=True) * y).sum().backward()
    assert x.grad is None


def test_grad_shape_matches_values_invariant():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(3, 5)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 2)).astype(np.float32), requires_grad=True)
    ((x @ w) * (x @ w)).sum().backward()
    assert x.grad.shape == x.shape and x.grad.dtype == x.dtype
    assert w.grad.shape == w.shape


def test_every_reachable_tensor_has_grad_after_backward():
    x = Tensor(np.ones(2), requires_grad=True)
    y = Tensor(np.ones(2), requires_grad=True)
    z = (x * y + x).sum()
    z.backward()
    assert x.grad is not None and y.grad is not None


def test_stack_and_take_roundtrip_gradient():
    a = Tensor(np.arange(4.0), requires_grad=True)
    b = Tensor(np.arange(4.0) + 10.0, requires_grad=True)
    s = T.stack([a, b], axis=0)
    s[1, :].sum().backward()
    np.testing.assert_array_equal(a.grad, np.zeros(4))
    np.testing.assert_array_equal(b.grad, np.ones(4))


def test_concat_gradient_splits():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((3, 2)), requires_grad=True)
    c = T.concat([a, b], axis=0)
    (c * 2.0).sum().backward()
    np.testing.assert_array_equal(a.grad, np.full((2, 2), 2.0))
    np.testing.assert_array_equal(b.grad, np.full((3, 2), 2.0))


def test_transpose_inverse_permutation():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
    weights = np.arange(24.0).reshape(4, 2, 3)
    (x.transpose(2, 0, 1) * Tensor(weights)).sum().backward()
    np.testing.assert_array_equal(x.grad, weights.transpose(1, 2, 0))


def test_int_input_coerces_to_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
