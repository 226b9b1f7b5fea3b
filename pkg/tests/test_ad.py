import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pwainv import ad

finite = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)


def _fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.mark.parametrize("fn", [np.sin, np.cos, np.arctan, np.exp, np.tanh, np.sinh,
                                np.cosh, np.expm1, np.square])
@given(x=finite)
def test_unary_ufuncs_match_finite_differences(fn, x):
    d = fn(ad.Dual(np.array(x), np.ones((1,))))
    assert d.der[0] == pytest.approx(_fd(fn, x), rel=1e-6, abs=1e-8)


@given(x=st.floats(min_value=0.1, max_value=3.0))
def test_log_sqrt_and_power(x):
    for fn in (np.log, np.sqrt, lambda v: v ** 3, lambda v: 2.0 ** v, lambda v: 1.0 / v):
        d = fn(ad.Dual(np.array(x), np.ones((1,))))
        assert d.der[0] == pytest.approx(_fd(fn, x), rel=1e-6)


def test_product_and_quotient_rules():
    x = ad.seed(np.array([2.0, 3.0]))
    out = ad.stack([x[0] * x[1], x[0] / x[1], x[0] - x[1], -x[0] + 4.0])
    J = ad.tangent(out, 2)
    np.testing.assert_allclose(J, [[3.0, 2.0], [1 / 3, -2 / 9], [1.0, -1.0], [-1.0, 0.0]])


def test_matmul_both_sides():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    x = ad.seed(np.array([0.5, -1.0]))
    np.testing.assert_allclose(ad.tangent(M @ x, 2), M)
    np.testing.assert_allclose(ad.tangent(x @ M, 2), M.T)


def test_comparisons_use_values():
    x = ad.Dual(np.array(1.0), np.array([5.0]))
    assert x > 0.5 and x <= 1.0 and not (x < 1.0)


def test_jacobian_independent_of_chunk(rng):
    A = rng.standard_normal((6, 6))

    def f(v):
        return np.tanh(A @ v) * v

    x = rng.standard_normal(6)
    full = ad.jacobian(f, x)
    for chunk in (1, 2, 5):
        np.testing.assert_allclose(ad.jacobian(f, x, chunk), full, rtol=0, atol=1e-15)


def test_value_and_is_dual_on_plain_arrays():
    a = np.arange(3.0)
    assert not ad.is_dual(a)
    assert ad.value(a) is a
