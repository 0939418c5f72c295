import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lbrgm import tensorcore as tc


def grad_of(fn, **params):
    spec = tc.GradSpec(fn, tuple(params))
    return tc.gradient(spec, params)


def fd_ok(fn, tol=1e-6, **params):
    return tc.finite_diff_check(tc.GradSpec(fn, tuple(params)), params).max_rel_err <= tol


def test_docstring_example():
    g = grad_of(lambda p: tc.sum_(p["x"] * p["x"]), x=np.array([3.0, 4.0]))
    np.testing.assert_array_equal(g["x"], [6.0, 8.0])


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
    g = grad_of(lambda p: tc.sum_((p["a"] + p["b"]) * p["b"]), a=a, b=b)
    np.testing.assert_allclose(g["a"], np.tile(b, (3, 1)))
    np.testing.assert_allclose(g["b"], (a + 2 * b).sum(axis=0))


@pytest.mark.parametrize("name, fn", [
    ("div", lambda p: tc.sum_(p["x"] / (tc.square(p["x"]) + 1.0))),
    ("sqrt", lambda p: tc.sum_(tc.sqrt(tc.square(p["x"]) + 0.5))),
    ("power", lambda p: tc.sum_(tc.power(tc.square(p["x"]) + 1.0, 1.5))),
    ("sigmoid", lambda p: tc.sum_(tc.sigmoid(p["x"]) * p["x"])),
    ("tanh", lambda p: tc.sum_(tc.tanh(p["x"]))),
    ("exp", lambda p: tc.sum_(tc.exp(0.3 * p["x"]))),
    ("mean", lambda p: tc.mean(tc.square(p["x"]), axis=0)[1]),
    ("matmul", lambda p: tc.sum_(tc.square(tc.matmul(p["x"], np.arange(8.0).reshape(4, 2))))),
    ("matmul-left", lambda p: tc.sum_(tc.square(tc.matmul(np.arange(6.0).reshape(2, 3), p["x"])))),
    ("reshape+getitem", lambda p: tc.sum_(tc.reshape(p["x"], (-1,))[2:5])),
    ("concat", lambda p: tc.sum_(tc.square(tc.concat([p["x"][0], 2.0 * p["x"][1]])))),
    ("tile_rows", lambda p: tc.sum_(tc.square(tc.tile_rows(p["x"][0], 3)) * np.arange(12.0).reshape(3, 4))),
    ("broadcast_to", lambda p: tc.sum_(tc.square(tc.broadcast_to(p["x"][0], (2, 4))))),
])
def test_op_gradients_match_central_differences(name, fn):
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert fd_ok(fn, x=x), name


def test_block_pool_matches_reshape_mean_and_gradient():
    x = np.random.default_rng(2).normal(size=(8, 6, 2))
    out = tc.block_pool(tc.const(x), 2).value
    np.testing.assert_allclose(out, x.reshape(4, 2, 3, 2, 2).mean(axis=(1, 3)))
    g = grad_of(lambda p: tc.sum_(tc.block_pool(p["x"], 2)), x=x)["x"]
    np.testing.assert_allclose(g, np.full_like(x, 0.25))


def test_lrelu_values_and_derivative_at_zero():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_allclose(tc.lrelu(tc.const(x)).value, [-0.4, 0.0, 3.0])
    g = grad_of(lambda p: tc.sum_(tc.lrelu(p["x"])), x=x)["x"]
    np.testing.assert_allclose(g, [0.2, 1.0, 1.0])


def test_non_finite_output_names_the_op():
    with pytest.raises(tc.NonFiniteError) as err:
        tc.div(tc.const(np.ones(2)), tc.const(np.zeros(2)))
    assert err.value.op == "div"
    assert "div" in str(err.value)


def test_as_tensor_rejects_nan_and_is_read_only():
    with pytest.raises(tc.NonFiniteError):
        tc.as_tensor([1.0, np.nan])
    arr = tc.as_tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        arr[0] = 3.0


def test_matmul_shape_error():
    with pytest.raises(tc.ShapeError):
        tc.matmul(tc.const(np.ones((2, 3))), tc.const(np.ones((2, 3))))


def test_off_path_parameter_gets_zero_gradient():
    g = grad_of(lambda p: tc.sum_(tc.square(p["a"])), a=np.ones(3), b=np.ones(2))
    np.testing.assert_array_equal(g["b"], np.zeros(2))


def test_ndarray_on_the_left_defers_to_var():
    v = tc.param(np.ones(3))
    out = np.arange(3.0) - v
    assert isinstance(out, tc.Var)
    np.testing.assert_array_equal(out.value, [-1.0, 0.0, 1.0])


def test_backward_does_not_mutate_graph_and_is_repeatable():
    x = tc.param(np.array([1.0, 2.0]))
    y = tc.sum_(tc.square(x) * 3.0)
    g1 = tc.backward(y)[id(x)]
    g2 = tc.backward(y)[id(x)]
    np.testing.assert_array_equal(g1, g2)
    np.testing.assert_array_equal(g1, [6.0, 12.0])


def test_jacobian_of_linear_map_is_the_matrix():
    m = np.random.default_rng(3).normal(size=(5, 4))
    jac = tc.jacobian(lambda v: tc.matmul(m, v), np.ones(4))
    np.testing.assert_allclose(jac, m)


def test_finite_diff_check_catches_a_wrong_gradient():
    def bad_square(a):
        a = tc.const(a)
        return tc._node("bad", a.value ** 2, (a,), lambda g: (g * a.value,))  # missing factor 2

    report = tc.finite_diff_check(tc.GradSpec(lambda p: tc.sum_(bad_square(p["x"])), ("x",)),
                                  {"x": np.array([1.0, -2.0])})
    assert report.max_rel_err > 0.3


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        tc.finite_diff_check(tc.GradSpec(lambda p: tc.sum_(p["x"]), ("x",)), {"x": np.ones(2)}, step=0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, (2,), elements=st.floats(-3, 3)))
def test_property_sigmoid_affine_gradient(a, b):
    # entries can be exactly zero (b = 0), so compare with an absolute floor
    spec = tc.GradSpec(lambda p: tc.sum_(tc.sigmoid(tc.matmul(p["a"], p["b"]))), ("a", "b"))
    params = {"a": a, "b": b}
    got = tc.gradient(spec, params)
    for name, x in params.items():
        num = np.zeros_like(x)
        for i in range(x.size):
            hi, lo = {k: v.copy() for k, v in params.items()}, {k: v.copy() for k, v in params.items()}
            hi[name].reshape(-1)[i] += 1e-6
            lo[name].reshape(-1)[i] -= 1e-6
            num.reshape(-1)[i] = (tc.eval_objective(spec, hi) - tc.eval_objective(spec, lo)) / 2e-6
        np.testing.assert_allclose(got[name], num, rtol=1e-5, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(-5, 5)))
def test_property_sum_of_squares_gradient_exact(x):
    g = grad_of(lambda p: tc.sum_(tc.square(p["x"])), x=x)["x"]
    np.testing.assert_array_equal(g, 2 * x)
