import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgmc import autodiff as ad
from mgmc.autodiff import NonFiniteError, Tape, TapeError, grad_check, parameter, value_and_grad


def rand_param(rng, *shape):
    return parameter(rng.standard_normal(shape))


class TestBasics:
    def test_sum_gradient_all_ones(self, rng):
        x = rand_param(rng, 3, 4)
        _, (g,) = value_and_grad(lambda: ad.sum(x), [x])
        np.testing.assert_array_equal(g, np.ones((3, 4)))

    def test_frobenius_gradient(self, rng):
        X = rand_param(rng, 3, 4)
        val, (g,) = value_and_grad(lambda: ad.frobenius_sq(X), [X])
        assert val == pytest.approx(np.sum(X.data**2))
        np.testing.assert_allclose(g, 2 * X.data)

    def test_bilinear_trace_zero_and_identity(self, rng):
        x = rand_param(rng, 5)
        val, (g,) = value_and_grad(lambda: ad.bilinear_trace(x, np.zeros((5, 5))), [x])
        assert val == 0 and not g.any()
        val, (g,) = value_and_grad(lambda: ad.bilinear_trace(x, np.eye(5)), [x])
        assert val == pytest.approx(np.sum(x.data**2))
        np.testing.assert_allclose(g, 2 * x.data)

    def test_bilinear_trace_matches_trace(self, rng):
        X = rng.standard_normal((4, 3))
        A = rng.standard_normal((4, 4))
        assert ad.bilinear_trace(X, A).item() == pytest.approx(np.trace(X.T @ A @ X), abs=1e-12)

    def test_masked_full_mask_equals_frobenius(self, rng):
        X = rng.standard_normal((4, 5))
        full = ad.masked_frobenius_sq(X, np.ones((4, 5), bool)).item()
        assert full == pytest.approx(ad.frobenius_sq(X).item(), abs=1e-12)

    def test_relu_subgradient_at_zero(self):
        x = parameter(np.array([-1.0, 0.0, 2.0]))
        _, (g,) = value_and_grad(lambda: ad.sum(ad.relu(x)), [x])
        np.testing.assert_array_equal(g, [0, 0, 1])

    def test_sigmoid_is_stable_for_large_inputs(self):
        y = ad.sigmoid(np.array([-1000.0, 0.0, 1000.0])).data
        np.testing.assert_allclose(y, [0, 0.5, 1])


class TestErrors:
    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteError):
            ad.hadamard_product(np.array([np.inf]), np.array([0.0]))

    def test_non_finite_is_floating_point_error(self):
        with pytest.raises(FloatingPointError):
            ad.add(np.array([1e308]), np.array([1e308]))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            ad.matmul(rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
        with pytest.raises(ValueError):
            ad.add(rng.standard_normal((2, 3)), rng.standard_normal((3, 2)))

    def test_non_scalar_root(self, rng):
        x = rand_param(rng, 3)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(TapeError, match="scalar"):
            tape.backward(y)

    def test_double_backward_needs_reset(self, rng):
        x = rand_param(rng, 3)
        with Tape() as tape:
            y = ad.sum(x * x)
        tape.backward(y)
        with pytest.raises(TapeError):
            tape.backward(y)
        tape.reset()
        with tape:
            y = ad.sum(x)
        tape.backward(y)
        np.testing.assert_array_equal(x.grad, np.ones(3))

    def test_root_from_other_tape(self, rng):
        x = rand_param(rng, 3)
        with Tape():
            y = ad.sum(x)
        with pytest.raises(TapeError):
            Tape().backward(y)


shapes = st.tuples(st.integers(1, 4), st.integers(1, 4))


def _primitive_cases(rng, m, n):
    A = rand_param(rng, m, n)
    B = rand_param(rng, m, n)
    C = rand_param(rng, n, 3)
    v = rand_param(rng, n)
    S = rng.standard_normal((m, m))
    mask = rng.random((m, n)) < 0.6
    # shift away from the kink so central differences are valid
    R = parameter(np.where(np.abs(A.data) < 0.1, 0.5, A.data))
    return [
        (lambda: ad.sum(ad.add(A, B) * B), [A, B]),
        (lambda: ad.sum(ad.subtract(A, v) * A), [A, v]),
        (lambda: ad.sum(ad.hadamard_product(A, B)), [A, B]),
        (lambda: ad.sum(ad.scalar_scale(A, -1.7) * A), [A]),
        (lambda: ad.frobenius_sq(ad.matmul(A, C)), [A, C]),
        (lambda: ad.sum(ad.transpose(A) @ B), [A, B]),
        (lambda: ad.sum(ad.reshape(A, (n, m)) @ A), [A]),
        (lambda: ad.sum(ad.relu(R) * B), [R, B]),
        (lambda: ad.sum(ad.sigmoid(A) * B), [A, B]),
        (lambda: ad.sum(ad.tanh(A) * B), [A, B]),
        (lambda: ad.frobenius_sq(ad.concat([A, B], axis=1)), [A, B]),
        (lambda: ad.frobenius_sq(ad.concat([A, B], axis=0)), [A, B]),
        (lambda: ad.frobenius_sq(A[:, : max(1, n // 2)]), [A]),
        (lambda: ad.frobenius_sq(ad.take_rows(A, [0, 0, m - 1])), [A]),
        (lambda: ad.frobenius_sq(ad.sum(A, axis=0)), [A]),
        (lambda: ad.frobenius_sq(ad.sum(A, axis=1)), [A]),
        (lambda: ad.masked_frobenius_sq(A * B, mask), [A, B]),
        (lambda: ad.bilinear_trace(A, S), [A]),
    ]


@settings(max_examples=15, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**31 - 1))
def test_every_primitive_passes_grad_check(shape, seed):
    rng = np.random.default_rng(seed)
    for k, (fn, params) in enumerate(_primitive_cases(rng, *shape)):
        ok, worst, _ = grad_check(fn, params, tol=1e-5)
        assert ok, f"case {k}: {worst}"


def test_linear_function_exact(rng):
    A = rand_param(rng, 3, 3)
    w = rng.standard_normal((3, 3))
    ok, worst, _ = grad_check(lambda: ad.sum(A * w), [A], tol=1e-10)
    assert ok, worst


def test_sigmoid_chain_depth_10(rng):
    x = rand_param(rng, 4)

    def f():
        y = x
        for _ in range(10):
            y = ad.sigmoid(y * 3.0)
        return ad.sum(y)

    ok, worst, _ = grad_check(f, [x], tol=1e-5)
    assert ok, worst


def test_adjoint_linearity(rng):
    X = rand_param(rng, 4, 3)
    A = rng.standard_normal((4, 4))

    def f1():
        return ad.bilinear_trace(ad.tanh(X), A)

    def f2():
        return ad.frobenius_sq(ad.sigmoid(X))

    _, (g1,) = value_and_grad(f1, [X])
    _, (g2,) = value_and_grad(f2, [X])
    _, (g12,) = value_and_grad(lambda: f1() + f2(), [X])
    np.testing.assert_allclose(g12, g1 + g2, atol=1e-12)


def test_shared_subexpression_accumulates(rng):
    x = rand_param(rng, 3)
    _, (g,) = value_and_grad(lambda: ad.sum(x * x) + ad.sum(x), [x])
    np.testing.assert_allclose(g, 2 * x.data + 1)


def test_deterministic_gradients(rng):
    X = rand_param(rng, 6, 5)

    def f():
        return ad.frobenius_sq(ad.tanh(X @ ad.transpose(X)))

    v1, (g1,) = value_and_grad(f, [X])
    v2, (g2,) = value_and_grad(f, [X])
    assert v1 == v2
    assert np.array_equal(g1, g2)


def test_custom_op(rng):
    x = rand_param(rng, 3)
    ok, _, _ = grad_check(lambda: ad.sum(ad.custom_op(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")), [x])
    assert ok


def test_numpy_defers_to_tensor(rng):
    x = rand_param(rng, 2, 2)
    L = np.eye(2)
    assert isinstance(L @ x, ad.Tensor)
    assert isinstance(np.ones((2, 2)) - x, ad.Tensor)


def test_large_finite_values_are_not_flagged():
    # the sum of these overflows but every entry is finite
    x = ad.parameter(np.full(4, 1e308))
    assert np.all(ad.reshape(x, (2, 2)).data == 1e308)


def test_grad_check_measures():
    # d/dx x^3 = 3e-6 at x = 1e-3, where the h^2 truncation error of about
    # 1e-10 is large relative to the entry but not to the whole gradient
    x = ad.parameter(np.array([1.0, 1e-3]))
    _, entry, _ = ad.grad_check(lambda: ad.sum(x * x * x), [x], floor=1e-12)
    _, tensor, _ = ad.grad_check(lambda: ad.sum(x * x * x), [x], floor=1e-12, per="tensor")
    assert 1e-5 < entry < 1e-4
    assert tensor < 1e-9
    with pytest.raises(ValueError):
        ad.grad_check(lambda: ad.sum(x), [x], per="row")
