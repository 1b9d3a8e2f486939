import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from superlyap.generator import fd_jet
from superlyap.jets import EvalJet, abs_y_jet

coord = st.floats(0.3, 3.0)


def _jet(x, y):
    X, Y = EvalJet.coord_x(x), EvalJet.coord_y(y)
    return ((X * X + Y * Y).power(0.7) * X / (Y + 4.0)).sqrt()


def _f(x, y):
    return np.sqrt((x * x + y * y) ** 0.7 * x / (y + 4.0))


@settings(max_examples=50, deadline=None)
@given(coord, coord)
def test_chain_and_product_rules_match_finite_differences(x, y):
    exact = _jet(x, y)
    fd = fd_jet(_f, (x, y), h=1e-4)
    for name in ("value", "dx", "dy", "dxx", "dyy", "dxy"):
        a, b = float(getattr(exact, name)), float(getattr(fd, name))
        assert abs(a - b) <= 1e-6 * max(1.0, abs(a))


def test_constant_has_zero_partials():
    j = EvalJet.constant(3.0, like=np.zeros(4))
    assert np.all(j.value == 3.0)
    for name in ("dx", "dy", "dxx", "dyy", "dxy"):
        assert np.all(getattr(j, name) == 0)


def test_division_and_reciprocal_agree():
    X, Y = EvalJet.coord_x(np.array([1.5, 2.0])), EvalJet.coord_y(np.array([0.5, -1.0]))
    a = (X * Y) / (X + 3.0)
    b = (X * Y) * (X + 3.0).reciprocal()
    for name in ("value", "dx", "dy", "dxx", "dyy", "dxy"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=1e-14)


def test_abs_y_uses_plus_one_at_axis():
    j = abs_y_jet(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_array_equal(j.value, [2.0, 0.0, 3.0])
    np.testing.assert_array_equal(j.dy, [-1.0, 1.0, 1.0])


def test_where_and_take():
    X = EvalJet.coord_x(np.arange(4.0))
    Y = EvalJet.coord_y(np.arange(4.0))
    w = X.where(np.array([True, False, True, False]), Y)
    np.testing.assert_array_equal(w.dx, [1, 0, 1, 0])
    np.testing.assert_array_equal(w.take(slice(1, 3)).value, [1.0, 2.0])
