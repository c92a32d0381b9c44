import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from minimt import tensor as T
from minimt.tensor import (GradientError, Parameter, RngState, ShapeError, Tensor, apply_primitive, backward,
                           check_gradients, no_grad)

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


# -- rng ---------------------------------------------------------------------


def test_xorshift_reference_values():
    # hand-rolled xorshift64* on python ints, independent of the class
    x, mask = 1, (1 << 64) - 1
    expected = []
    for _ in range(3):
        x ^= x >> 12
        x ^= (x << 25) & mask
        x ^= x >> 27
        expected.append((x * 0x2545F4914F6CDD1D) & mask)
    rng = RngState(1)
    assert [rng.next_u64() for _ in range(3)] == expected


def test_rng_zero_seed_is_usable():
    rng = RngState(0)
    assert len({rng.next_u64() for _ in range(10)}) == 10


def test_rng_state_roundtrip():
    a = RngState(7)
    a.next_u64()
    b = RngState(123)
    b.set_state(a.get_state())
    assert a.uniform_array((3, 4)).tolist() == b.uniform_array((3, 4)).tolist()


@given(st.integers(0, 2**64 - 1))
@settings(max_examples=30)
def test_uniform_in_unit_interval(seed):
    u = RngState(seed).uniform_array((50,))
    assert ((u >= 0) & (u < 1)).all()


def test_shuffle_is_permutation():
    items = list(range(20))
    RngState(3).shuffle(items)
    assert sorted(items) == list(range(20)) and items != list(range(20))


# -- primitives ----------------------------------------------------------------


def test_softmax_uniform():
    out = T.softmax(Tensor([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_matmul_identity():
    m = np.array([[1.5, -2.0], [0.25, 3.0]])
    assert (T.matmul(Tensor(np.eye(2)), Tensor(m)).data == m).all()


def test_layer_norm_hand_value():
    out = T.layer_norm(Tensor([2.0, 4.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    # mean 3, variance 1
    expected = np.array([-1.0, 1.0]) / np.sqrt(1.0 + T.LAYER_NORM_EPS)
    np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-15)


def test_masked_fill_gives_exact_zero_after_softmax():
    x = Tensor([[0.3, 5.0, -1.0]])
    p = T.softmax(T.masked_fill(x, np.array([[False, True, False]])))
    assert p.data[0, 1] == 0.0
    assert abs(p.data.sum() - 1.0) < 1e-15


def test_apply_primitive_dispatch():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
    assert apply_primitive("add", [a, b]).data.tolist() == [4.0, 6.0]
    assert apply_primitive("concat", [a, b], axis=0).data.tolist() == [1, 2, 3, 4]
    with pytest.raises(ValueError, match="unknown primitive"):
        apply_primitive("conv", [a])


def test_shape_error_names_primitive_and_shapes():
    with pytest.raises(ShapeError) as e:
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    msg = str(e.value)
    assert "matmul" in msg and "(2, 3)" in msg
    with pytest.raises(ShapeError, match="add"):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


@given(arrays(np.float64, (3, 5), elements=finite))
def test_softmax_rows_sum_to_one(x):
    p = T.softmax(Tensor(x)).data
    assert (p > 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-9)


@given(arrays(np.float64, (2, 4), elements=finite))
def test_log_softmax_matches_log_of_softmax(x):
    np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, np.log(T.softmax(Tensor(x)).data), atol=1e-9)


# -- backward ----------------------------------------------------------------


def test_quadratic_gradient():
    p = Parameter("p", [1.0, 2.0])
    backward(T.sum(T.mul(p, p)))
    assert p.grad.tolist() == [2.0, 4.0]


def test_unreachable_parameter_has_no_gradient():
    p, q = Parameter("p", [1.0]), Parameter("q", [1.0])
    backward(T.sum(T.mul(q, q)))
    assert p.grad is None or not p.grad.any()


def test_backward_requires_scalar():
    p = Parameter("p", [1.0, 2.0])
    with pytest.raises(GradientError):
        backward(T.mul(p, p))
    assert T.tape_size() == 0


def test_tape_cleared_after_backward():
    p = Parameter("p", [1.0])
    backward(T.sum(T.tanh(p)))
    assert T.tape_size() == 0


def test_no_grad_records_nothing():
    p = Parameter("p", [1.0])
    with no_grad():
        T.tanh(p)
    assert T.tape_size() == 0


@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)), arrays(np.float64, (3, 1), elements=st.floats(-3, 3)))
@settings(max_examples=30)
def test_backward_is_linear(w, x):
    def grads(which):
        p = Parameter("p", w.copy())
        y1 = T.sum(T.tanh(T.matmul(p, Tensor(x))))
        y2 = T.sum(T.mul(p, p))
        loss = {"a": y1, "b": y2, "ab": T.add(y1, y2)}[which]
        backward(loss)
        T.clear_tape()
        return p.grad

    np.testing.assert_allclose(grads("ab"), grads("a") + grads("b"), rtol=0, atol=1e-12)


PRIMITIVE_CASES = {
    "tanh": lambda p: T.sum(T.tanh(p)),
    "sigmoid": lambda p: T.sum(T.mul(T.sigmoid(p), Tensor([[1.0, 2.0, 3.0]]))),
    "relu": lambda p: T.sum(T.mul(T.relu(T.add(p, 0.05)), p)),
    "softmax": lambda p: T.sum(T.mul(T.softmax(p), Tensor([[1.0, -2.0, 0.5]]))),
    "log_softmax": lambda p: T.sum(T.mul(T.log_softmax(p, axis=0), Tensor([[1.0, 2.0, 0.5]]))),
    "layer_norm": lambda p: T.sum(T.mul(T.layer_norm(p, Tensor(np.array([1.0, 2.0, 0.5])), Tensor(np.ones(3))),
                                        Tensor([[0.3, -1.0, 2.0]]))),
    "matmul": lambda p: T.sum(T.tanh(T.matmul(T.reshape(p, (3, 2)), Tensor([[1.0, -1.0], [0.5, 2.0]])))),
    "concat_take": lambda p: T.sum(T.mul(T.concat([p, p[:, :2]], axis=-1), Tensor(np.arange(5.0)))),
    "stack_mean": lambda p: T.mean(T.mul(T.stack([p, T.tanh(p)], axis=0), T.stack([p, p], axis=0))),
    "transpose": lambda p: T.sum(T.matmul(T.transpose(p), T.tanh(p))),
    "masked_fill": lambda p: T.sum(T.mul(T.softmax(T.masked_fill(p, np.array([[False, True, False]]))),
                                         Tensor([[1.0, 2.0, 3.0]]))),
    "lookup": lambda p: T.sum(T.tanh(T.lookup(T.reshape(p, (3, 2)), np.array([[0, 2], [2, 2]])))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    fn = PRIMITIVE_CASES[name]
    x = np.array([[0.3, -0.7, 1.1], [0.9, 0.2, -0.4]])[:1 if name in ("softmax", "masked_fill", "sigmoid",
                                                                          "layer_norm") else 2]
    p = Parameter("p", x.copy())
    backward(fn(p))

    def f(v):
        with no_grad():
            return fn(Tensor(v)).item()

    np.testing.assert_allclose(p.grad, _numeric_grad(f, x.copy()), rtol=1e-6, atol=1e-8)


def test_batched_matmul_gradient():
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    a, b = Parameter("a", a0.copy()), Parameter("b", b0.copy())
    backward(T.sum(T.tanh(T.matmul(a, b))))
    np.testing.assert_allclose(b.grad, _numeric_grad(lambda v: np.tanh(a0 @ v).sum(), b0.copy()), atol=1e-8)
    np.testing.assert_allclose(a.grad, _numeric_grad(lambda v: np.tanh(v @ b0).sum(), a0.copy()), atol=1e-8)


def test_broadcast_add_gradient():
    b = Parameter("b", np.zeros(3))
    backward(T.sum(T.add(Tensor(np.ones((4, 3))), b)))
    assert b.grad.tolist() == [4.0, 4.0, 4.0]


def test_dropout_determinism_and_scaling():
    x = Tensor(np.ones((50, 40)))
    a = T.dropout(x, 0.3, RngState(5)).data
    b = T.dropout(x, 0.3, RngState(5)).data
    assert (a == b).all()
    assert set(np.unique(a)) <= {0.0, 1.0 / 0.7}
    assert 0.2 < (a == 0).mean() < 0.4
    assert T.dropout(x, 0.3, None) is x


def test_check_gradients_reports_and_skips_frozen():
    w = Parameter("w", [[0.5, -0.3], [0.1, 0.8]])
    f = Parameter("f", [1.0, 2.0], frozen=True)
    x = Tensor([[0.2, -0.4]])
    report = check_gradients([w, f], lambda: T.sum(T.tanh(T.add(T.matmul(x, w), f))))
    assert report["passed"] and report["skipped"] == ["f"]
    assert set(report["errors"]) == {"w"} and report["max_error"] < 1e-6


def test_check_gradients_flags_wrong_gradient():
    p = Parameter("p", [0.5, -1.0])

    def bad_loss():
        # records a backward that ignores the chain rule factor of 2
        out = T._record(np.array(np.sum(p.data ** 2)), (p,), lambda g: T._accumulate(p, g * p.data))
        return out

    assert not check_gradients([p], bad_loss)["passed"]


def test_check_gradients_non_finite():
    p = Parameter("p", [1.0])
    with pytest.raises(GradientError):
        check_gradients([p], lambda: T.mul(T.sum(p), float("inf")))


def test_frozen_parameter_records_no_gradient():
    p = Parameter("p", [1.0, 2.0])
    p.frozen = True
    backward(T.sum(T.mul(p, Tensor([3.0, 3.0]))) + T.sum(Parameter("q", [1.0])))
    assert p.grad is None
