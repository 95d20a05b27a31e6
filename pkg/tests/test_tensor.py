import numpy as np
import pytest

from src.model.Tensor import (
    ComputationTape, Tensor, backward, clip, concat, exp, log, log_sigmoid, log_softmax, matmul, mean, parameter,
    relu, reshape, set_debug_numerics, sigmoid, slice_, softmax, sum_, tanh, transpose,
)
from src.utils.Exceptions import NonFiniteError, ShapeError


def test_sigmoid_at_zero():
    assert sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)


def test_sigmoid_saturates_without_overflow():
    out = sigmoid(Tensor([-800.0, 800.0])).data
    np.testing.assert_allclose(out, [0.0, 1.0])
    assert np.all(np.isfinite(log_sigmoid(Tensor([-800.0, 800.0])).data))


def test_softmax_of_equal_logits_is_uniform():
    np.testing.assert_allclose(softmax(Tensor(np.zeros(4))).data, np.full(4, 0.25))
    np.testing.assert_allclose(log_softmax(Tensor(np.zeros(4))).data, np.full(4, np.log(0.25)))


def test_product_gradients():
    x, y = parameter(3.0), parameter(-2.0)
    with ComputationTape() as tape:
        z = x * y
    grads = backward(tape, z)
    assert grads[x] == pytest.approx(-2.0)
    assert grads[y] == pytest.approx(3.0)


def test_sum_gradient_is_ones():
    x = parameter(np.arange(6.0).reshape(2, 3))
    with ComputationTape() as tape:
        total = sum_(x)
    np.testing.assert_array_equal(backward(tape, total)[x], np.ones((2, 3)))


def test_untouched_leaf_gets_zero_gradient():
    x, unused = parameter([1.0, 2.0]), parameter([[5.0]])
    with ComputationTape() as tape:
        total = sum_(x * x)
    grads = backward(tape, total, [x, unused])
    np.testing.assert_allclose(grads[x], [2.0, 4.0])
    np.testing.assert_array_equal(grads[unused], np.zeros((1, 1)))


def test_shared_input_accumulates():
    x = parameter(2.0)
    with ComputationTape() as tape:
        y = x * x + x
    assert backward(tape, y)[x] == pytest.approx(5.0)


def test_non_scalar_root_raises():
    x = parameter([1.0, 2.0])
    with ComputationTape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        backward(tape, y)


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        reshape(Tensor(np.ones(6)), (4, 2))


def test_nothing_recorded_without_tape():
    x = parameter([1.0])
    y = x * 3.0
    assert y.requires_grad
    with ComputationTape() as tape:
        pass
    assert len(tape) == 0


def test_constants_are_not_recorded():
    with ComputationTape() as tape:
        Tensor([1.0]) * Tensor([2.0])
    assert len(tape) == 0


def test_debug_numerics_flags_nonfinite_output():
    set_debug_numerics(True)
    try:
        with pytest.raises(NonFiniteError):
            Tensor([np.inf]) * 0.0
    finally:
        set_debug_numerics(False)


def test_log_rejects_non_positive_input():
    with pytest.raises(NonFiniteError):
        log(Tensor([0.0, 1.0]))


def test_clip_blocks_gradient_outside_bounds():
    x = parameter([-2.0, 0.5, 3.0])
    with ComputationTape() as tape:
        total = sum_(clip(x, low=-1.0, high=1.0))
    np.testing.assert_array_equal(backward(tape, total)[x], [0.0, 1.0, 0.0])


def test_composite_network_gradients(gradient_check):
    rng = np.random.default_rng(0)
    params = {
        "w1": parameter(rng.normal(size=(3, 4))),
        "b1": parameter(rng.normal(size=4)),
        "w2": parameter(rng.normal(size=(4, 2))),
    }
    x = Tensor(rng.normal(size=(5, 3)))
    target = np.array([0, 1, 1, 0, 1])
    taken = np.eye(2)[target]

    def loss(p):
        hidden = tanh(matmul(x, p["w1"]) + p["b1"])
        return -mean(sum_(log_softmax(matmul(hidden, p["w2"])) * taken, axis=-1))

    gradient_check(loss, params)


def test_structural_primitives_gradients(gradient_check):
    rng = np.random.default_rng(1)
    params = {"a": parameter(rng.normal(size=(2, 3, 3))), "b": parameter(rng.normal(size=(2, 3, 1)))}

    def loss(p):
        joined = concat([p["a"], p["b"]], axis=-1)
        head = slice_(joined, (slice(None), slice(0, 2), slice(None)))
        swapped = transpose(reshape(head, (2, 4, 2)))
        return sum_(sigmoid(swapped) * exp(mean(relu(p["a"]), axis=(1, 2), keepdims=True)))

    gradient_check(loss, params)


def test_elementwise_gradients(gradient_check):
    rng = np.random.default_rng(2)
    params = {"x": parameter(rng.uniform(0.5, 2.0, size=(4,)))}

    def loss(p):
        return sum_(log(p["x"]) * log_sigmoid(p["x"]) + p["x"] ** 1.5 - softmax(p["x"]) * 3.0)

    gradient_check(loss, params)
