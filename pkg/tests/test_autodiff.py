import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from accent_mdd import autodiff as ad
from accent_mdd.autodiff import Graph, GradCheckError, ShapeError, Tensor, grad_check
from accent_mdd.verify import op_suite


def _grad(fn, x):
    t = Tensor(np.asarray(x, dtype=float))
    g = Graph()
    loss = fn(g, g.leaf(t))
    g.backward(loss)
    return t.grad


def test_forward_examples():
    g = Graph()
    assert np.array_equal(g.constant([1.0, -1.0, 0.0]).relu().value, [1.0, 0.0, 0.0])
    assert g.constant([0.0]).sigmoid().value[0] == 0.5
    np.testing.assert_allclose(g.constant([2.5, 2.5, 2.5]).softmax().value, [1 / 3] * 3, atol=1e-15)
    out = g.constant([[1.0, 2.0]]) @ g.constant(np.eye(2))
    assert np.array_equal(out.value, [[1.0, 2.0]])


def test_backward_examples():
    assert np.array_equal(_grad(lambda g, x: (x * x).sum(), [3.0]), [6.0])
    assert np.array_equal(_grad(lambda g, x: (x + x).sum(), [1.0, -4.0, 2.0]), [2.0, 2.0, 2.0])
    assert np.array_equal(_grad(lambda g, x: x.sigmoid().sum(), [0.0]), [0.25])


def test_relu_grad_at_zero_is_zero():
    assert np.array_equal(_grad(lambda g, x: x.relu().sum(), [0.0, 1.0, -1.0]), [0.0, 1.0, 0.0])


def test_nodes_are_topologically_ordered(rng):
    g = Graph()
    x = g.leaf(Tensor(rng.normal(size=(3, 4))))
    w = g.leaf(Tensor(rng.normal(size=(4, 2))))
    ((x @ w).tanh().softmax() * 2.0).sum()
    for node in g.nodes:
        assert all(i < node.id for i in node.inputs)


def test_non_scalar_loss_rejected():
    g = Graph()
    x = g.leaf(Tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        g.backward(x * 2.0)


def test_shape_errors_name_the_op():
    g = Graph()
    with pytest.raises(ShapeError, match="matmul"):
        g.constant(np.ones((2, 3))) @ g.constant(np.ones((2, 3)))
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([g.constant(np.ones((2, 3))), g.constant(np.ones((3, 3)))])
    with pytest.raises(ShapeError, match="add"):
        g.constant(np.ones((2, 3))) + g.constant(np.ones((4,)))


def test_gradients_accumulate_across_backward_calls():
    t = Tensor(np.array([1.0, 2.0]))
    for _ in range(2):
        g = Graph()
        g.backward((g.leaf(t) * 3.0).sum())
    assert np.array_equal(t.grad, [6.0, 6.0])


def test_backward_is_deterministic(rng):
    x = Tensor(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(5, 3)))

    def run():
        x.grad = w.grad = None
        g = Graph()
        y = (g.leaf(x) @ g.leaf(w)).tanh().log_softmax()
        g.backward((y * g.constant(np.arange(12.0).reshape(4, 3))).sum())
        return x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_grad_check_quadratic():
    assert grad_check(lambda x: (float(x[0] ** 2), 2 * x), [3.0], 1e-4) <= 1e-6


def test_grad_check_rejects_non_finite():
    with pytest.raises(GradCheckError):
        grad_check(lambda x: (float("nan"), x), [1.0])
    with pytest.raises(ValueError):
        grad_check(lambda x: (0.0, x), [1.0], step=0.0)


def test_grad_check_detects_wrong_gradient():
    assert grad_check(lambda x: (float(x[0] ** 3), 2 * x), [2.0]) > 0.1


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    g = Graph()
    s = g.constant(x).softmax().value
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)
    assert np.isfinite(g.constant(x).log_softmax().value).all()


@pytest.mark.parametrize("n", [1, 2, 7, 41])
def test_log_softmax_uniform(n):
    g = Graph()
    np.testing.assert_allclose(g.constant(np.full(n, 3.7)).log_softmax().value, -np.log(n), atol=1e-12)


def test_logsumexp_handles_all_negative_infinity():
    g = Graph()
    t = Tensor(np.array([[-np.inf, -np.inf], [0.0, -np.inf]]))
    y = ad.logsumexp(g.leaf(t), axis=1)
    assert y.value[0] == -np.inf and y.value[1] == 0.0
    g.backward(y[1:].sum())
    assert np.array_equal(t.grad, [[0.0, 0.0], [1.0, 0.0]])


def test_every_op_passes_fd_check():
    worst = op_suite(trials=100, seed=0, step=1e-4)
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    assert not bad, bad


def test_register_custom_op():
    ad.register_op("cube_test", lambda vals: vals[0] ** 3, lambda g, vals, out, ctx: (3 * vals[0] ** 2 * g,))
    t = Tensor(np.array([2.0]))
    gr = Graph()
    gr.backward(gr.apply("cube_test", [gr.leaf(t)]).sum())
    assert t.grad[0] == 12.0
    with pytest.raises(ValueError):
        gr.apply("no_such_op", [gr.leaf(t)])
