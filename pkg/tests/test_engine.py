import numpy as np
import pytest

from app.core.exceptions import GraphError, NonFiniteError, ShapeError
from app.engine import (
    Graph,
    Tensor,
    argmax,
    backward,
    clamp_min,
    conv2d,
    exp,
    finite_difference_check,
    forward_eval,
    l2_normalize,
    log,
    log_softmax,
    relu,
    softmax,
    softplus,
    sqrt,
    square,
    take,
    take_rows,
)


# ==================== forward_eval ====================

def test_forward_doubles_input():
    graph = Graph.trace(lambda x: x + x, {"x": [1.0, 2.0]})
    out = forward_eval(graph, {"x": [1.0, 2.0]})
    np.testing.assert_array_equal(out["output"], [2.0, 4.0])


def test_forward_softmax_of_zeros_is_uniform():
    graph = Graph.trace(lambda x: softmax(x), {"x": [0.0, 0.0]})
    np.testing.assert_allclose(forward_eval(graph, {"x": [0.0, 0.0]})["output"], [0.5, 0.5])


def test_forward_identity_matmul():
    graph = Graph.trace(lambda a, x: a @ x, {"a": np.eye(2), "x": [[1.0], [1.0]]})
    out = forward_eval(graph, {"a": np.eye(2), "x": [[3.0], [7.0]]})
    np.testing.assert_array_equal(out["output"].ravel(), [3.0, 7.0])


def test_forward_shape_mismatch_names_node():
    graph = Graph.trace(lambda x: x + x, {"x": [1.0, 2.0]})
    with pytest.raises(ShapeError) as info:
        forward_eval(graph, {"x": [1.0, 2.0, 3.0]})
    assert info.value.node == "x"


def test_forward_rejects_non_finite_input_in_strict_mode():
    graph = Graph.trace(lambda x: x * 2.0, {"x": [1.0]})
    with pytest.raises(NonFiniteError):
        forward_eval(graph, {"x": [np.nan]}, strict=True)
    assert np.isnan(forward_eval(graph, {"x": [np.nan]}, strict=False)["output"][0])


def test_forward_unbound_input():
    graph = Graph.trace(lambda x, y: x + y, {"x": [1.0], "y": [2.0]})
    with pytest.raises(GraphError):
        forward_eval(graph, {"x": [1.0]})


def test_forward_is_reproducible():
    x = np.random.default_rng(0).standard_normal((4, 5))
    graph = Graph.trace(lambda x: log_softmax(x @ x.T, axis=1).sum(), {"x": x})
    first = forward_eval(graph, {"x": x})["output"]
    second = forward_eval(graph, {"x": x})["output"]
    assert first.tobytes() == second.tobytes()


def test_nodes_follow_their_parents():
    graph = Graph.trace(lambda x: relu(x * x - 1.0).sum(), {"x": [1.0, 2.0]})
    for node in graph.nodes:
        assert all(parent < node.index for parent in node.parents)


# ==================== backward ====================

def test_backward_power_rule():
    graph = Graph.trace(lambda x: x * x, {"x": 3.0})
    forward_eval(graph, {"x": 3.0})
    assert float(backward(graph, "output", 1.0)["x"]) == pytest.approx(6.0)


def test_backward_sum_gives_ones():
    x = np.arange(6.0).reshape(2, 3)
    graph = Graph.trace(lambda x: x.sum(), {"x": x})
    forward_eval(graph, {"x": x})
    np.testing.assert_array_equal(backward(graph, "output", 1.0)["x"], np.ones((2, 3)))


def test_backward_before_forward():
    graph = Graph.trace(lambda x: x * x, {"x": 3.0})
    with pytest.raises(GraphError):
        backward(graph, "output", 1.0)


def test_backward_through_argmax_names_node():
    graph = Graph.trace(lambda x: argmax(x, axis=0) + x, {"x": [1.0, 3.0, 2.0]})
    forward_eval(graph, {"x": [1.0, 3.0, 2.0]})
    with pytest.raises(GraphError) as info:
        backward(graph, "output", np.ones(3))
    assert info.value.node is not None


def test_backward_seed_shape_mismatch():
    graph = Graph.trace(lambda x: x * 2.0, {"x": [1.0, 2.0]})
    forward_eval(graph, {"x": [1.0, 2.0]})
    with pytest.raises(ShapeError):
        backward(graph, "output", np.ones(3))


def test_backward_is_linear_in_seed():
    x = np.random.default_rng(1).standard_normal(5)
    graph = Graph.trace(lambda x: softplus(x) * x, {"x": x})
    forward_eval(graph, {"x": x})
    seed = np.random.default_rng(2).standard_normal(5)
    once = backward(graph, "output", seed)["x"]
    twice = backward(graph, "output", 2.0 * seed)["x"]
    np.testing.assert_array_equal(twice, 2.0 * once)


def test_backward_accumulates_into_leaves():
    leaf = Tensor([1.0, 2.0], requires_grad=True)
    graph = Graph.trace(lambda x: (x * x).sum(), {"x": [1.0, 2.0]})
    forward_eval(graph, {"x": [1.0, 2.0]})
    backward(graph, "output", 1.0, leaves={"x": leaf})
    backward(graph, "output", 1.0, leaves={"x": leaf})
    np.testing.assert_allclose(leaf.grad, [4.0, 8.0])


def test_eager_backward_accumulates_reused_leaf():
    x = Tensor(3.0, requires_grad=True)
    (x * x + x).backward()
    assert float(x.grad) == pytest.approx(7.0)


@pytest.mark.parametrize("combine, value, grad", [
    (lambda a, t: a * t, [2.0, 6.0], [2.0, 3.0]),
    (lambda a, t: a + t, [3.0, 5.0], [1.0, 1.0]),
    (lambda a, t: a - t, [1.0, 1.0], [-1.0, -1.0]),
    (lambda a, t: a / t, [2.0, 1.5], [-2.0, -0.75]),
])
def test_numpy_operand_on_the_left_stays_on_tape(combine, value, grad):
    x = Tensor([1.0, 2.0], requires_grad=True)
    out = combine(np.array([2.0, 3.0]), x)
    assert isinstance(out, Tensor)
    np.testing.assert_allclose(out.data, value)
    out.sum().backward()
    np.testing.assert_allclose(x.grad, grad)


def test_numpy_scalar_on_the_left_stays_on_tape():
    x = Tensor([1.0, 2.0], requires_grad=True)
    out = np.float64(4.0) * x
    assert isinstance(out, Tensor)
    out.sum().backward()
    np.testing.assert_allclose(x.grad, [4.0, 4.0])


def test_l2_normalize_gradient_at_3_4():
    graph = Graph.trace(lambda x: l2_normalize(x).sum(), {"x": [3.0, 4.0]})
    forward_eval(graph, {"x": [3.0, 4.0]})
    analytic = backward(graph, "output", 1.0)["x"]
    error = finite_difference_check(lambda x: l2_normalize(x).sum(), np.array([3.0, 4.0]))
    assert error < 1e-6
    np.testing.assert_allclose(analytic, [0.032, -0.024], rtol=1e-9)


# ==================== finite_difference_check ====================

def test_square_matches_central_difference():
    assert finite_difference_check(lambda x: square(x).sum(), np.array(3.0)) < 1e-8


def test_step_must_be_positive():
    with pytest.raises(ValueError):
        finite_difference_check(lambda x: x.sum(), np.ones(2), step=0.0)


def test_non_finite_value_is_an_error():
    with pytest.raises(NonFiniteError):
        finite_difference_check(lambda x: log(x - 10.0).sum(), np.ones(2))


PRIMITIVES = {
    "add": lambda x: (x + x * 0.5).sum(),
    "sub": lambda x: (x - square(x) * 0.1).sum(),
    "mul": lambda x: (x * x).sum(),
    "div": lambda x: (1.0 / (square(x) + 1.0)).sum(),
    "exp": lambda x: exp(x).sum(),
    "log": lambda x: log(square(x) + 1.0).sum(),
    "sqrt": lambda x: sqrt(square(x) + 1.0).sum(),
    "relu": lambda x: (relu(x) * x).sum(),
    "softplus": lambda x: softplus(x * 3.0).sum(),
    "clamp_min": lambda x: (clamp_min(x, -0.25) * x).sum(),
    "mean": lambda x: (x.mean(axis=1) * x.sum(axis=1)).sum(),
    "softmax": lambda x: (softmax(x, axis=1) * x).sum(),
    "log_softmax": lambda x: (log_softmax(x, axis=1) * x).sum(),
    "l2_normalize": lambda x: (l2_normalize(x, axis=1) * x).sum(),
    "matmul": lambda x: square(x @ x.T).sum(),
    "reshape": lambda x: square(x.reshape(x.size)).sum(),
    "take": lambda x: square(take(x, [0, 3, 3, 5])).sum(),
    "take_rows": lambda x: square(take_rows(x, [2, 0, 2])).sum(),
}


@pytest.mark.parametrize("index, name", list(enumerate(sorted(PRIMITIVES))))
def test_primitive_gradients_at_random_points(index, name):
    rng = np.random.default_rng(index)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal((3, 4))
        # keep relu and clamp away from their kinks
        x = np.where(np.abs(x) < 1e-3, 0.7, x)
        x = np.where(np.abs(x + 0.25) < 1e-3, 0.7, x)
        worst = max(worst, finite_difference_check(PRIMITIVES[name], x))
    assert worst < 1e-4


def test_conv2d_gradient():
    rng = np.random.default_rng(7)
    weights = rng.standard_normal((2, 2, 3, 3))

    def f(x):
        return square(conv2d(x, Tensor(weights), stride=2, padding=1)).sum()

    assert finite_difference_check(f, rng.standard_normal((1, 2, 5, 5))) < 1e-4


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))
