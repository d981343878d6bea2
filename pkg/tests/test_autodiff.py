import math

import numpy as np
import pytest

from skillfocus.core.autodiff import HALF_LOG_2PI, Tape, finite_diff_check, log_softmax
from skillfocus.core.exceptions import GraphStateError, ShapeMismatchError


def _unary(op):
    tape = Tape()
    tape.output("y", getattr(tape, op)(tape.input("x")))
    return tape


def test_forward_spot_values():
    assert _unary("tanh").forward({"x": 0.0})["y"] == 0.0

    tape = Tape()
    tape.output("y", tape.log_softmax(tape.input("x")))
    np.testing.assert_allclose(tape.forward({"x": np.full(4, 0.7)})["y"], np.full(4, math.log(0.25)), atol=1e-15)

    assert _unary("elu").forward({"x": -1.0})["y"] == pytest.approx(math.exp(-1.0) - 1.0, abs=1e-12)


def test_tanh_derivative_at_zero():
    tape = _unary("tanh")
    tape.forward({"x": 0.0})
    assert tape.backward(1.0)["x"] == pytest.approx(1.0)


def test_log_softmax_gradients():
    tape = Tape()
    tape.output("y", tape.sum(tape.log_softmax(tape.input("z"), axis=1)))
    tape.forward({"z": np.array([[0.3, -1.2, 2.0, 0.1]])})
    # d/dz Σ log softmax = 1 - K·softmax
    expected = 1.0 - 4.0 * np.exp(log_softmax(np.array([[0.3, -1.2, 2.0, 0.1]]), axis=1))
    np.testing.assert_allclose(tape.backward(1.0)["z"], expected, atol=1e-12)

    tape = Tape()
    logits = tape.input("z")
    tape.output("y", tape.sum(tape.exp(tape.log_softmax(logits, axis=1))))
    tape.forward({"z": np.array([[0.3, -1.2, 2.0, 0.1]])})
    np.testing.assert_allclose(tape.backward(1.0)["z"], np.zeros((1, 4)), atol=1e-12)


def _mlp_tape(depth=3):
    tape = Tape()
    h = tape.input("x")
    for i in range(depth):
        h = tape.tanh(tape.add(tape.matmul(h, tape.input(f"W{i}")), tape.input(f"b{i}")))
    tape.output("loss", tape.mean(tape.mul(h, tape.input("target"))))
    return tape


def test_random_mlp_matches_finite_differences(rng):
    tape = _mlp_tape()
    widths = [5, 7, 6, 3]
    inputs = {"x": rng.uniform(-2, 2, (4, widths[0])), "target": rng.uniform(-2, 2, (4, widths[-1]))}
    for i in range(3):
        inputs[f"W{i}"] = rng.uniform(-1, 1, (widths[i], widths[i + 1]))
        inputs[f"b{i}"] = rng.uniform(-1, 1, widths[i + 1])
    report = finite_diff_check(tape, inputs, h=1e-5, tol=1e-6)
    assert report.passed, report.max_rel_error


PRIMITIVE_CASES = {
    "matmul": (lambda t, a, b: t.matmul(a, b), (3, 4), (4, 2)),
    "add": (lambda t, a, b: t.add(a, b), (3, 4), (4,)),
    "sub": (lambda t, a, b: t.sub(a, b), (3, 1), (3, 4)),
    "mul": (lambda t, a, b: t.mul(a, b), (3, 4), (1, 4)),
    "minimum": (lambda t, a, b: t.minimum(a, b), (3, 4), (3, 4)),
    "maximum": (lambda t, a, b: t.maximum(a, b), (3, 4), (3, 4)),
    "elu": (lambda t, a, b: t.mul(t.elu(a), b), (3, 4), (3, 4)),
    "tanh": (lambda t, a, b: t.mul(t.tanh(a), b), (3, 4), (3, 4)),
    "exp": (lambda t, a, b: t.mul(t.exp(a), b), (3, 4), (3, 4)),
    "log_softmax": (lambda t, a, b: t.mul(t.log_softmax(a, axis=1), b), (3, 4), (3, 4)),
    "gaussian": (lambda t, a, b: t.gaussian_log_density(a, b, t.scale(b, 0.3)), (3, 4), (3, 4)),
    "sum": (lambda t, a, b: t.mul(t.sum(a, axis=0, keepdims=True), b), (3, 4), (1, 4)),
    "mean": (lambda t, a, b: t.mul(t.mean(a, axis=1), b), (3, 4), (3,)),
    "clip": (lambda t, a, b: t.mul(t.clip(a, -1.0, 1.0), b), (3, 4), (3, 4)),
    "broadcast": (lambda t, a, b: t.mul(t.broadcast(a, (3, 4)), b), (1, 4), (3, 4)),
    "scale": (lambda t, a, b: t.mul(t.scale(a, -2.5), b), (3, 4), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_vjp_matches_finite_differences(name, rng):
    build, shape_a, shape_b = PRIMITIVE_CASES[name]
    tape = Tape()
    out = build(tape, tape.input("a"), tape.input("b"))
    tape.output("y", tape.sum(tape.mul(out, tape.input("w"))))
    a = rng.uniform(-2, 2, shape_a)
    b = rng.uniform(-2, 2, shape_b)
    sizing = Tape()
    sizing_out = build(sizing, sizing.input("a"), sizing.input("b"))
    sizing.output("out", sizing_out)
    w = rng.uniform(-2, 2, sizing.forward({"a": a, "b": b})["out"].shape)
    report = finite_diff_check(tape, {"a": a, "b": b, "w": w}, h=1e-5, tol=1e-6, wrt=["a", "b"])
    assert report.passed, report.max_rel_error


def test_linear_function_is_exact():
    tape = Tape()
    tape.output("y", tape.scale(tape.input("x"), 3.0))
    report = finite_diff_check(tape, {"x": np.array(0.7)}, h=1e-5, tol=1e-10)
    assert report.worst < 1e-10


def test_corrupted_gradient_fails_on_exactly_that_parameter(rng):
    tape = Tape()
    tape.output("y", tape.sum(tape.tanh(tape.matmul(tape.input("x"), tape.input("W")))))
    inputs = {"x": rng.uniform(-1, 1, (3, 4)), "W": rng.uniform(-1, 1, (4, 2))}
    tape.forward(inputs)
    grads = tape.backward(1.0)
    grads["W"] = grads["W"] * 2.0
    report = finite_diff_check(tape, inputs, tol=1e-6, gradients=grads)
    assert report.failing == ["W"]


def test_disjoint_subgraph_gets_exact_zero_gradient(rng):
    tape = Tape()
    used = tape.tanh(tape.input("a"))
    unused = tape.exp(tape.input("b"))
    tape.output("y", tape.sum(used))
    tape.output("other", tape.sum(unused))
    tape.forward({"a": rng.normal(size=3), "b": rng.normal(size=3)})
    grads = tape.backward(1.0, "y")
    assert np.array_equal(grads["b"], np.zeros(3))
    assert np.all(grads["a"] != 0.0)


def test_stop_gradient_blocks_flow():
    tape = Tape()
    x = tape.input("x")
    tape.output("y", tape.mul(tape.stop_gradient(x), x))
    tape.forward({"x": np.array(3.0)})
    assert tape.backward(1.0)["x"] == pytest.approx(3.0)


def test_backward_before_forward_raises():
    tape = _unary("tanh")
    with pytest.raises(GraphStateError):
        tape.backward(1.0)


def test_unbound_input_raises():
    tape = _unary("tanh")
    with pytest.raises(GraphStateError):
        tape.forward({})


def test_shape_mismatch_names_node():
    tape = Tape()
    tape.output("y", tape.matmul(tape.input("a"), tape.input("b")))
    with pytest.raises(ShapeMismatchError) as info:
        tape.forward({"a": np.ones((2, 3)), "b": np.ones((2, 3))})
    assert info.value.details["op"] == "matmul"


def test_forward_is_bit_identical(rng):
    tape = _mlp_tape(2)
    inputs = {
        "x": rng.normal(size=(4, 3)),
        "W0": rng.normal(size=(3, 5)),
        "b0": rng.normal(size=5),
        "W1": rng.normal(size=(5, 2)),
        "b1": rng.normal(size=2),
        "target": rng.normal(size=(4, 2)),
    }
    first = tape.forward(inputs)["loss"].copy()
    assert np.array_equal(first, tape.forward(inputs)["loss"])


def test_gaussian_log_density_at_mean():
    tape = Tape()
    tape.output("y", tape.gaussian_log_density(tape.input("x"), tape.input("m"), tape.input("s")))
    out = tape.forward({"x": np.zeros(3), "m": np.zeros(3), "s": np.zeros(3)})["y"]
    np.testing.assert_allclose(out, -HALF_LOG_2PI)
    assert HALF_LOG_2PI == pytest.approx(0.9189385332)
