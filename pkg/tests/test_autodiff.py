import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvp.autodiff import (Adam, GradientError, ShapeError, Tensor, add, channel_affine, conv2d,
                          mean, mul, no_grad, relu, reshape, slice_batch, square, sub, sum as tsum)
from oracles import adam_scalar, conv2d_loops, numerical_grad, relative_error

INSTANCES = 100
TOL = 1e-6


def gradcheck(build, arrays, rng=None, coords=None):
    """Relative error between autodiff and central differences for
    ``build(*tensors) -> scalar Tensor``."""
    def f(arrs):
        with no_grad():
            return float(build(*[Tensor(a) for a in arrs]).data)

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    num = numerical_grad(f, arrays, coords=coords, rng=rng)
    return max(relative_error(t.grad, g) for t, g in zip(tensors, num))


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x + 1e-300) + x, x)


PRIMITIVES = {
    "add": (lambda a, b: tsum(square(add(a, b))), lambda r: [r.standard_normal((3, 4)), r.standard_normal((1, 4))]),
    "sub": (lambda a, b: tsum(square(sub(a, b))), lambda r: [r.standard_normal((2, 3)), r.standard_normal((2, 3))]),
    "mul": (lambda a, b: tsum(mul(a, b) * mul(a, b)), lambda r: [r.standard_normal((3, 1)), r.standard_normal((3, 5))]),
    "square": (lambda a: tsum(square(a)), lambda r: [r.standard_normal((4, 4))]),
    "mean": (lambda a: mean(square(a)), lambda r: [r.standard_normal((2, 5))]),
    "sum": (lambda a: tsum(a * a * a), lambda r: [r.standard_normal(6)]),
    "reshape": (lambda a: tsum(square(reshape(a, (6, 2))) * np.arange(12.0).reshape(6, 2)),
                lambda r: [r.standard_normal((3, 4))]),
    "slice_batch": (lambda a: tsum(square(slice_batch(a, 1, 3))), lambda r: [r.standard_normal((4, 2, 2))]),
    "relu": (lambda a: tsum(square(relu(a))), lambda r: [_away_from_zero(r, (3, 5))]),
    "channel_affine": (lambda x, s, b: tsum(square(channel_affine(x, s, b))),
                       lambda r: [r.standard_normal((2, 3, 2, 2)), r.standard_normal(3), r.standard_normal(3)]),
    "channel_affine_nhwc": (lambda x, s, b: tsum(square(channel_affine(x, s, b, layout="NHWC"))),
                            lambda r: [r.standard_normal((2, 2, 2, 3)), r.standard_normal(3), r.standard_normal(3)]),
    "conv2d_reflect": (lambda x, k, b: tsum(square(conv2d(x, k, b))),
                       lambda r: [r.standard_normal((2, 2, 5, 4)), r.standard_normal((3, 2, 3, 3)), r.standard_normal(3)]),
    "conv2d_zeros": (lambda x, k: tsum(square(conv2d(x, k, None, padding="zeros"))),
                     lambda r: [r.standard_normal((1, 2, 4, 4)), r.standard_normal((2, 2, 3, 3))]),
    "conv2d_nhwc": (lambda x, k, b: tsum(square(conv2d(x, k, b, layout="NHWC"))),
                    lambda r: [r.standard_normal((2, 4, 5, 2)), r.standard_normal((2, 2, 3, 3)), r.standard_normal(2)]),
    "conv2d_k5": (lambda x, k: tsum(square(conv2d(x, k))),
                  lambda r: [r.standard_normal((1, 1, 6, 6)), r.standard_normal((1, 1, 5, 5))]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    build, make = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = max(gradcheck(build, make(rng)) for _ in range(INSTANCES))
    assert worst <= TOL


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for padding in ("reflect", "zeros"):
        x = rng.standard_normal((2, 3, 6, 5))
        k = rng.standard_normal((2, 3, 3, 3))
        b = rng.standard_normal(2)
        got = conv2d(Tensor(x), Tensor(k), Tensor(b), padding=padding).data
        np.testing.assert_allclose(got, conv2d_loops(x, k, b, padding), rtol=1e-12, atol=1e-12)
        nhwc = conv2d(Tensor(x.transpose(0, 2, 3, 1)), Tensor(k), Tensor(b), padding=padding, layout="NHWC")
        np.testing.assert_allclose(nhwc.data.transpose(0, 3, 1, 2), got, rtol=1e-12, atol=1e-12)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 2, 5, 5)))
    with pytest.raises(ShapeError, match="input channels"):
        conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="odd"):
        conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))
    with pytest.raises(ShapeError, match="bias"):
        conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError, match="rank"):
        conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(np.zeros((1, 2, 3, 3))))
    with pytest.raises(ShapeError, match="reflect"):
        conv2d(Tensor(np.zeros((1, 1, 1, 5))), Tensor(np.zeros((1, 1, 3, 3))))


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GradientError):
        square(t).backward()


def test_graph_released_unless_retained():
    t = Tensor(np.array(2.0), requires_grad=True)
    out = square(t)
    out.backward(retain_graph=True)
    out.backward()
    assert t.grad == pytest.approx(8.0)
    t.grad = None
    out.backward()  # graph released: nothing reaches the leaf
    assert t.grad is None


def test_no_grad_records_nothing():
    t = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        out = tsum(square(t))
    assert not out.requires_grad


def test_shared_subexpression_accumulates():
    t = Tensor(np.array(3.0), requires_grad=True)
    s = square(t)
    (s + s * t).backward()
    # d/dt (t^2 + t^3) = 2t + 3t^2
    assert t.grad == pytest.approx(6 + 27)


def test_non_finite_gradient_raises():
    t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with pytest.raises(GradientError, match="non-finite"):
        tsum(mul(t, np.array([np.inf, 1.0]))).backward()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_add_gradient_is_ones_under_broadcast(a, b):
    x = Tensor(np.array(a), requires_grad=True)
    y = Tensor(np.array(b[:1]), requires_grad=True)
    tsum(add(x, y)).backward()
    assert np.all(x.grad == 1.0)
    assert y.grad[0] == len(a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_conv_is_linear_in_input(seed):
    rng = np.random.default_rng(seed)
    k = Tensor(rng.standard_normal((2, 1, 3, 3)))
    x1, x2 = rng.standard_normal((2, 1, 1, 5, 5))
    a, b = rng.standard_normal(2)
    lhs = conv2d(Tensor(a * x1 + b * x2), k).data
    rhs = a * conv2d(Tensor(x1), k).data + b * conv2d(Tensor(x2), k).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_adam_matches_scalar_recurrence():
    rng = np.random.default_rng(2)
    grads = rng.standard_normal(50)
    p = Tensor(np.array([0.5]), requires_grad=True)
    opt = Adam([p], lr=1e-2)
    expected = adam_scalar(grads, lr=1e-2, theta=0.5)
    for g, want in zip(grads, expected):
        p.grad = np.array([g])
        opt.step()
        assert p.data[0] == pytest.approx(want, abs=1e-14)


def test_adam_rejects_non_finite_step_without_change():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    q = Tensor(np.array([3.0]), requires_grad=True)
    opt = Adam([p, q])
    p.grad = np.array([0.1, 0.2])
    q.grad = np.array([np.nan])
    with pytest.raises(GradientError):
        opt.step()
    assert opt.state.step == 0
    assert np.array_equal(p.data, [1.0, 2.0])
    assert np.all(opt.state.m[0] == 0)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p.data, [-0.1, 0.1], rtol=1e-6)
