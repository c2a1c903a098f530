import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from patchfree.errors import DomainError, ShapeError, UsageError
from patchfree.tensor import (Tensor, add, backward, elementwise, finite_difference_check, mul,
                              no_grad, reduce_mean, relu, reshape, sigmoid, topo_order, tsum,
                              zero_grad)


def test_elementwise_examples():
    assert elementwise("relu", Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]
    assert elementwise("sigmoid", Tensor([0.0])).data.tolist() == [0.5]
    assert elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data.tolist() == [4, 6]
    with pytest.raises(ValueError):
        elementwise("tanh", Tensor([0.0]))


def test_channel_broadcast_only():
    x = Tensor(np.ones((3, 2, 2)))
    s = Tensor(np.arange(3.0).reshape(3, 1, 1))
    assert mul(x, s).data[:, 0, 0].tolist() == [0, 1, 2]
    assert add(s, x).shape == (3, 2, 2)
    with pytest.raises(ShapeError):
        add(Tensor(np.ones((3, 2, 2))), Tensor(np.ones((2, 2))))
    with pytest.raises(ShapeError):
        mul(Tensor(np.ones((3, 2, 2))), Tensor(np.ones((1, 2, 2))))


def test_reduce_mean_examples():
    x = Tensor([[1.0, 3.0], [5.0, 7.0]], requires_grad=True)
    assert reduce_mean(x).item() == 4
    assert reduce_mean(x, 1).data.tolist() == [2, 6]
    backward(reduce_mean(x))
    assert np.all(x.grad == 0.25)


def test_reduce_mean_empty_extent():
    with pytest.raises(DomainError):
        reduce_mean(Tensor(np.zeros((2, 0))), 1)


def test_backward_examples():
    w = Tensor([1.0, 2.0], requires_grad=True)
    x = Tensor([3.0, 4.0])
    backward(tsum(mul(w, x)))
    assert w.grad.tolist() == [3, 4]

    z = Tensor([0.0], requires_grad=True)
    backward(tsum(sigmoid(z)))
    assert z.grad.tolist() == [0.25]


def test_backward_usage_errors():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(UsageError):
        backward(mul(w, w))
    loss = tsum(mul(w, w))
    backward(loss)
    with pytest.raises(UsageError):
        backward(loss)
    with pytest.raises(UsageError):
        backward(tsum(Tensor([1.0])))


def test_gradient_accumulates_over_uses():
    x = Tensor([1.5, -2.0, 0.5], requires_grad=True)
    backward(tsum(add(add(x, x), x)))
    triple = x.grad.copy()
    zero_grad([x])
    backward(tsum(mul(x, 3.0)))
    np.testing.assert_array_equal(triple, x.grad)


def test_leaf_grads_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(tsum(x * 2.0))
    backward(tsum(x * 2.0))
    assert x.grad.tolist() == [4, 4]


def test_backward_visits_reverse_forward_order():
    x = Tensor(np.ones((2, 2, 2)), requires_grad=True)
    a = relu(x)
    b = sigmoid(a)
    c = mul(a, b)
    loss = tsum(c)
    order = [n.op for n, _ in topo_order(loss)]
    assert order == ["relu", "sigmoid", "mul", "sum"]
    seqs = [n.seq for n, _ in topo_order(loss)]
    assert seqs == sorted(seqs)


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = mul(w, w)
    assert y.node is None and not y.requires_grad


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0], requires_grad=True)
    backward(tsum(relu(x)))
    assert x.grad.tolist() == [0.0]


def test_mean_then_broadcast_mul_keeps_shape(rng):
    x = Tensor(rng.standard_normal((5, 3, 4)))
    s = reshape(reduce_mean(x, (1, 2)), (5, 1, 1))
    assert mul(x, s).shape == (5, 3, 4)


def test_forward_deterministic(rng):
    d = rng.standard_normal((4, 6, 6)).astype(np.float32)
    outs = [mul(sigmoid(Tensor(d)), relu(Tensor(d))).data for _ in range(2)]
    assert outs[0].tobytes() == outs[1].tobytes()


def test_check_finite():
    from patchfree.errors import NumericError
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan]).check_finite()


# -- finite-difference oracle ------------------------------------------------


def test_fd_sum_of_squares():
    err = finite_difference_check(lambda t: tsum(mul(t, t)), Tensor([1.0, 2.0]), 1e-4)
    assert err < 1e-6


def test_fd_constant_function():
    err = finite_difference_check(lambda t: tsum(mul(t, 0.0)), Tensor([1.0, 2.0]), 1e-4)
    assert err == 0.0


def test_fd_relu_away_from_kink():
    err = finite_difference_check(lambda t: tsum(mul(relu(t), t)), Tensor([0.5, -0.7, 1.3]), 1e-4)
    assert err < 1e-4


_arrays = hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
                     elements=st.floats(-3, 3))


@settings(max_examples=100, deadline=None)
@given(_arrays)
def test_fd_sigmoid_mul_mean(x):
    w = np.linspace(0.5, 1.5, x.size).reshape(x.shape)
    err = finite_difference_check(lambda t: tsum(mul(sigmoid(t), Tensor(w))), Tensor(x), 1e-4)
    assert err < 1e-4
    err = finite_difference_check(lambda t: tsum(mul(reduce_mean(t, (1, 2)), Tensor(w[:, 0, 0]))),
                                  Tensor(x), 1e-4)
    assert err < 1e-4
