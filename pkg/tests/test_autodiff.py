"""Gradient and graph-plumbing checks for the autodiff core.

Every op in the inventory gets a central-difference check at 1e-4
tolerance; the remaining tests pin graph semantics (eager evaluation,
shape errors, determinism guard, zero grads for unreachable params).
"""

import numpy as np
import pytest

from notesing import autodiff as ad

RNG = np.random.default_rng(12345)
TOL = 1e-4


def _p(**arrays):
    return ad.ParamSet({k: ad.Tensor(v) for k, v in arrays.items()})


def _leaf(params, name):
    return ad.constant(params[name], name)


# ---------------------------------------------------------------------------
# one finite-difference case per op


def _scalarize(node):
    # sum keeps gradients dense; squared_norm would vanish at 0
    return ad.sum_all(ad.tanh(node))


OP_CASES = {}


def op_case(name, **arrays):
    def register(builder):
        OP_CASES[name] = (builder, arrays)
        return builder
    return register


@op_case("add", a=RNG.standard_normal((3, 4)), b=RNG.standard_normal((3, 4)))
def _(p):
    return _scalarize(ad.add(_leaf(p, "a"), _leaf(p, "b")))


@op_case("sub", a=RNG.standard_normal((3, 4)), b=RNG.standard_normal((3, 4)))
def _(p):
    return _scalarize(ad.sub(_leaf(p, "a"), _leaf(p, "b")))


@op_case("mul", a=RNG.standard_normal((3, 4)), b=RNG.standard_normal((3, 4)))
def _(p):
    return _scalarize(ad.mul(_leaf(p, "a"), _leaf(p, "b")))


@op_case("scale", a=RNG.standard_normal(6))
def _(p):
    return _scalarize(ad.scale(_leaf(p, "a"), -1.7))


@op_case("add_rowvec", m=RNG.standard_normal((4, 3)), v=RNG.standard_normal(3))
def _(p):
    return _scalarize(ad.add_rowvec(_leaf(p, "m"), _leaf(p, "v")))


@op_case("matvec", a=RNG.standard_normal((4, 3)), x=RNG.standard_normal(3))
def _(p):
    return _scalarize(ad.matvec(_leaf(p, "a"), _leaf(p, "x")))


@op_case("matvec_t", a=RNG.standard_normal((4, 3)), x=RNG.standard_normal(4))
def _(p):
    return _scalarize(ad.matvec_t(_leaf(p, "a"), _leaf(p, "x")))


@op_case("matmul", a=RNG.standard_normal((3, 4)), b=RNG.standard_normal((4, 2)))
def _(p):
    return _scalarize(ad.matmul(_leaf(p, "a"), _leaf(p, "b")))


@op_case("matmul_t", a=RNG.standard_normal((3, 4)), b=RNG.standard_normal((2, 4)))
def _(p):
    return _scalarize(ad.matmul_t(_leaf(p, "a"), _leaf(p, "b")))


@op_case("concat", a=RNG.standard_normal(3), b=RNG.standard_normal(2))
def _(p):
    return _scalarize(ad.concat([_leaf(p, "a"), _leaf(p, "b")]))


@op_case("vslice", a=RNG.standard_normal(7))
def _(p):
    return _scalarize(ad.vslice(_leaf(p, "a"), 2, 5))


@op_case("row", m=RNG.standard_normal((4, 3)))
def _(p):
    return _scalarize(ad.row(_leaf(p, "m"), 2))


@op_case("stack_rows", a=RNG.standard_normal(3), b=RNG.standard_normal(3))
def _(p):
    return _scalarize(ad.stack_rows([_leaf(p, "a"), _leaf(p, "b")]))


@op_case("reshape", a=RNG.standard_normal((3, 4)))
def _(p):
    return _scalarize(ad.reshape(_leaf(p, "a"), (6, 2)))


@op_case("sum_all", a=RNG.standard_normal((3, 4)))
def _(p):
    return ad.tanh(ad.sum_all(_leaf(p, "a")))


@op_case("squared_norm", a=RNG.standard_normal((3, 4)))
def _(p):
    return ad.squared_norm(_leaf(p, "a"))


@op_case("tanh", a=RNG.standard_normal(6))
def _(p):
    return ad.sum_all(ad.tanh(_leaf(p, "a")))


@op_case("sigmoid", a=RNG.standard_normal(6))
def _(p):
    return _scalarize(ad.sigmoid(_leaf(p, "a")))


@op_case("softmax", a=RNG.standard_normal(6))
def _(p):
    # weighted sum so the gradient is not identically zero
    w = ad.constant(np.arange(6, dtype=float))
    return ad.sum_all(ad.mul(w, ad.softmax(_leaf(p, "a"))))


@op_case("div_scalar", a=RNG.standard_normal(5), s=np.array(1.5 + RNG.random()))
def _(p):
    return _scalarize(ad.div_scalar(_leaf(p, "a"), _leaf(p, "s")))


@op_case("shift_forward", a=RNG.standard_normal(6))
def _(p):
    w = ad.constant(np.arange(1.0, 7.0))
    return ad.sum_all(ad.mul(w, ad.shift_forward(_leaf(p, "a"))))


@op_case("fill", s=np.array(0.37))
def _(p):
    w = ad.constant(np.arange(1.0, 5.0))
    return ad.sum_all(ad.mul(w, ad.fill(_leaf(p, "s"), 4)))


@op_case("conv1d", x=RNG.standard_normal((9, 3)), k=RNG.standard_normal((2, 3, 5)))
def _(p):
    return _scalarize(ad.conv1d(_leaf(p, "x"), _leaf(p, "k")))


@pytest.mark.parametrize("op_name", sorted(OP_CASES))
def test_op_gradient(op_name):
    builder, arrays = OP_CASES[op_name]
    params = _p(**arrays)
    err = ad.finite_diff_check(builder, params, eps=1e-5)
    assert err <= TOL, f"{op_name}: max rel err {err:.3e}"


def test_all_inventory_ops_covered():
    # constructor names vs internal op tags
    tag_of = {"vslice": "slice", "sum_all": "sum"}
    covered = {tag_of.get(name, name) for name in OP_CASES}
    inventory = set(ad._BACKWARD)
    assert inventory == covered, (
        f"missing cases: {inventory - covered}; stale cases: {covered - inventory}"
    )


# ---------------------------------------------------------------------------
# graph semantics


def test_eager_values_and_evaluate():
    a = ad.constant([1.0, 2.0])
    b = ad.constant([3.0, 4.0])
    out = ad.add(a, b)
    np.testing.assert_array_equal(out.value.array, [4.0, 6.0])
    assert ad.evaluate(out) is out.value


def test_shape_mismatch_raises():
    with pytest.raises(ad.ShapeError):
        ad.add(ad.constant([1.0, 2.0]), ad.constant([1.0, 2.0, 3.0]))
    with pytest.raises(ad.ShapeError):
        ad.matvec(ad.constant(np.ones((2, 3))), ad.constant(np.ones(2)))
    with pytest.raises(ad.ShapeError):
        ad.conv1d(ad.constant(np.ones((5, 2))), ad.constant(np.ones((1, 2, 4))))


def test_backward_requires_scalar():
    with pytest.raises(ad.GraphError):
        ad.backward(ad.constant([1.0, 2.0]))


def test_softmax_normalizes_exactly():
    for _ in range(20):
        z = RNG.standard_normal(8) * 10.0
        s = ad.softmax(ad.constant(z)).value.array
        assert abs(s.sum() - 1.0) <= 1e-12
        assert (s > 0).all()


def test_softmax_shift_invariance():
    z = RNG.standard_normal(8)
    a = ad.softmax(ad.constant(z)).value.array
    b = ad.softmax(ad.constant(z + 100.0)).value.array
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_gradients_zero_for_unreached_params():
    params = _p(used=RNG.standard_normal(3), unused=RNG.standard_normal(4))
    loss = ad.squared_norm(ad.constant(params["used"], "used"))
    grads = ad.gradients(loss, params)
    np.testing.assert_array_equal(grads["unused"].array, np.zeros(4))
    np.testing.assert_allclose(grads["used"].array, 2 * params["used"].array)


def test_gradient_accumulates_across_reuse():
    params = _p(a=np.array([1.0, 2.0]))
    x = ad.constant(params["a"], "a")
    loss = ad.sum_all(ad.mul(x, x))  # d/dx (x^2) = 2x through two parent slots
    grads = ad.gradients(loss, params)
    np.testing.assert_allclose(grads["a"].array, [2.0, 4.0])


def test_finite_diff_check_rejects_nondeterministic_builder():
    params = _p(a=np.ones(2))
    state = {"n": 0}

    def build(p):
        state["n"] += 1
        return ad.scale(ad.sum_all(ad.constant(p["a"], "a")), float(state["n"]))

    with pytest.raises(ad.GraphError):
        ad.finite_diff_check(build, params)


def test_finite_diff_check_rejects_bad_eps():
    params = _p(a=np.ones(2))

    def build(p):
        return ad.sum_all(ad.constant(p["a"], "a"))

    with pytest.raises(ad.GraphError):
        ad.finite_diff_check(build, params, eps=0.5)


def test_non_finite_input_rejected():
    with pytest.raises(ad.NonFiniteError):
        ad.constant([1.0, np.nan])
