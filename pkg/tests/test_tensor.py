import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from guidedflow.gradcheck import grad_check
from guidedflow.ops import conv2d, leaky_relu, sigmoid
from guidedflow.tensor import Tensor, concat, expand, no_grad, pad, parameter, precision


def test_float32_is_default():
    assert Tensor([1, 2, 3]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1, 2, 3]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_shapes_must_match_exactly():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((1, 3)))
    with pytest.raises(ValueError, match="shape mismatch"):
        a + b
    assert (a + expand(b, (2, 3))).shape == (2, 3)


def test_expand_rejects_non_singleton():
    with pytest.raises(ValueError):
        expand(Tensor(np.ones((2, 3))), (4, 3))


def test_backward_needs_scalar():
    x = parameter(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        (x * x).backward()


def test_gradients_accumulate_across_calls():
    x = parameter(np.array([1.0, 2.0]))
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_gradient():
    x = parameter(np.array([3.0]))
    y = x * x
    (y + y * x).sum().backward()  # 2x^2... d/dx (x^2 + x^3) = 2x + 3x^2
    np.testing.assert_allclose(x.grad, [2 * 3 + 3 * 9], rtol=1e-6)


def test_no_grad_records_nothing():
    x = parameter(np.ones(2))
    with no_grad():
        y = (x * x).sum()
    assert y.node is None
    y.backward()
    assert x.grad is None


def test_concat_and_slice_routes_gradients(f64):
    a, b = parameter(np.ones((1, 2, 3, 3))), parameter(np.ones((1, 1, 3, 3)))
    c = concat([a, b], axis=1)
    assert c.shape == (1, 3, 3, 3)
    (c[:, 1:] * 2.0).sum().backward()
    np.testing.assert_array_equal(a.grad[:, 0], 0.0)
    np.testing.assert_array_equal(a.grad[:, 1], 2.0)
    np.testing.assert_array_equal(b.grad, 2.0)


@pytest.mark.parametrize("mode", ["constant", "edge"])
def test_pad_gradient(mode, f64):
    rng = np.random.default_rng(1)
    x = parameter(rng.standard_normal((1, 2, 3, 4)))
    w = Tensor(rng.standard_normal((1, 2, 7, 8)))
    assert grad_check(lambda x: (pad(x, 2, mode) * w).sum(), [x])


def test_conv2d_shape_and_stride():
    x = Tensor(np.zeros((2, 3, 9, 9)))
    w, b = Tensor(np.zeros((5, 3, 3, 3))), Tensor(np.zeros(5))
    assert conv2d(x, w, b, stride=1, padding=1).shape == (2, 5, 9, 9)
    assert conv2d(x, w, b, stride=2, padding=1).shape == (2, 5, 5, 5)
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((5, 4, 3, 3))), b)


def test_sigmoid_is_stable_for_large_inputs():
    y = sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_leaky_relu_slope():
    y = leaky_relu(Tensor(np.array([-2.0, 3.0]))).data
    np.testing.assert_allclose(y, [-0.2, 3.0])


def test_grad_check_detects_wrong_gradient(f64):
    from guidedflow.tensor import Function

    class BadSquare(Function):
        name = "bad_square"

        def forward(self, a):
            self.a = a
            return a * a

        def backward(self, grad):
            return (grad * self.a,)  # missing factor 2

    x = parameter(np.linspace(0.5, 1.5, 5))
    report = grad_check(lambda x: BadSquare.apply(x).sum(), [x])
    assert not report
    assert report.max_rel_err > 0.4


arrays = hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
                    elements=st.floats(-3, 3))


@settings(max_examples=40, deadline=None)
@given(arrays)
def test_elementwise_gradients_property(a):
    with precision(np.float64):
        x = parameter(a)
        w = Tensor(np.cos(np.arange(a.size)).reshape(a.shape))
        fn = lambda x: ((x * x + x * 2.0 - 1.0) * w).sum() + (x.abs() + 0.5).sqrt().sum()
        # |x| has a kink at 0, keep away from it
        if np.min(np.abs(a)) < 1e-3:
            return
        assert grad_check(fn, [x])


@settings(max_examples=30, deadline=None)
@given(arrays, st.integers(0, 2))
def test_sum_mean_relation_property(a, axis):
    axis = min(axis, a.ndim - 1)
    s = Tensor(a).sum(axis=axis).data
    m = Tensor(a).mean(axis=axis).data
    np.testing.assert_allclose(s, m * a.shape[axis], rtol=1e-12, atol=1e-12)
