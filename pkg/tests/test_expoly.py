import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy import integrate

from stpn_hybrid.expoly import (
    Bound, Expolynomial, NonIntegrableError, PiecewisePdf, evaluate, integrate_piece,
    integrate_variable, marginal_cdf, mass, multiply, normalize, substitute,
)
from stpn_hybrid.zone import DbmZone, intersect_all

coef = st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3)
rate = st.sampled_from([0.0, 0.5, 1.0, 2.0, -0.5, 1.5])


@st.composite
def poly1(draw, positive_rates=False):
    n = draw(st.integers(1, 3))
    terms = {}
    for _ in range(n):
        r = draw(rate)
        if positive_rates:
            r = abs(r) or 1.0
        terms[((draw(st.integers(0, 3)),), (r,))] = draw(coef)
    return Expolynomial(("x",), terms)


@st.composite
def poly2(draw):
    n = draw(st.integers(1, 3))
    return Expolynomial(("x", "y"), {
        ((draw(st.integers(0, 2)), draw(st.integers(0, 2))), (draw(rate), draw(rate))): draw(coef)
        for _ in range(n)})


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


@settings(max_examples=1000)
@given(poly1(), st.floats(-2, 2), st.floats(0.01, 3))
def test_bounded_integral_matches_quadrature(f, lo, width):
    hi = lo + width
    exact = integrate_variable(f, "x", Bound.const(lo), Bound.const(hi)).constant_value()
    num, _ = integrate.quad(lambda x: evaluate(f, [x]), lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
    assert close(exact, num)


@settings(max_examples=1000)
@given(poly1(positive_rates=True), st.floats(0, 2))
def test_tail_integral_matches_quadrature(f, lo):
    exact = integrate_variable(f, "x", Bound.const(lo), Bound.const(math.inf)).constant_value()
    num, _ = integrate.quad(lambda x: evaluate(f, [x]), lo, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)
    assert close(exact, num)


def _zone_quad(f, lx, ux, ly, uy, c1, c2):
    # region: lx<=x<=ux, ly<=y<=uy, y-x<=c1, x-y<=c2
    def inner(x):
        a, b = max(ly, x - c2), min(uy, x + c1)
        if b <= a:
            return 0.0
        return integrate.quad(lambda y: evaluate(f, [x, y]), a, b, epsabs=1e-14, epsrel=1e-13)[0]
    kinks = [k for k in (ly + c2, uy + c2, ly - c1, uy - c1) if lx < k < ux]
    return integrate.quad(inner, lx, ux, points=kinks or None, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


@settings(max_examples=1000)
@given(poly2(), st.floats(0, 2), st.floats(0.2, 2), st.floats(0, 2), st.floats(0.2, 2),
       st.floats(-1, 2), st.floats(-1, 2))
# a band of width 1e-9 along the diagonal must keep its mass
@example(Expolynomial.constant(1.0, ("x", "y")), 0.0, 1.0, 0.0, 2.0, 1.0, 1e-9)
def test_zone_integral_matches_quadrature(f, lx, wx, ly, wy, c1, c2):
    ux, uy = lx + wx, ly + wy
    z = intersect_all(DbmZone.box({"x": (lx, ux), "y": (ly, uy)}), [("y", "x", c1), ("x", "y", c2)])
    num = _zone_quad(f, lx, ux, ly, uy, c1, c2)
    exact = 0.0 if z is None else integrate_piece(z, f)
    assert close(exact, num)


@settings(max_examples=300)
@given(poly2(), poly2(), st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=3, max_size=3))
def test_product_evaluates_pointwise(f, g, pts):
    h = multiply(f, g)
    for p in pts:
        assert close(evaluate(h, p), evaluate(f, p) * evaluate(g, p), 1e-10)


@settings(max_examples=300)
@given(poly2(), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1))
def test_substitution_evaluates_pointwise(f, a, c, x, y):
    # x := a*y + c
    g = substitute(f, "x", {"y": a, None: c})
    assert close(evaluate(g, [y]), evaluate(f, [a * y + c, y]), 1e-9)


def test_reference_integrals():
    x = Expolynomial.monomial("x", 1)
    assert integrate_variable(x, "x", Bound.const(0), Bound.const(1)).constant_value() == pytest.approx(0.5, abs=1e-15)
    e = Expolynomial.monomial("x", 0, 1.0)
    g = integrate_variable(e, "x", Bound.const(0), Bound("y", 0.0))
    for y in (0.0, 0.3, 2.0):
        assert evaluate(g, [y]) == pytest.approx(1 - math.exp(-y), abs=1e-14)


def test_divergent_integral_raises():
    grow = Expolynomial.monomial("x", 0, -1.0)
    with pytest.raises(NonIntegrableError):
        integrate_variable(grow, "x", Bound.const(0), Bound.const(math.inf))


def test_cancellation_is_relative():
    x = Expolynomial.monomial("x", 1)
    assert (x - x).is_zero()
    tiny = Expolynomial.monomial("x", 0, 5.0, math.exp(-100))
    assert not tiny.is_zero()
    assert (tiny + x - x) == tiny


def test_normalize_and_marginal_cdf():
    z = intersect_all(DbmZone.box({"x": (0, 1), "y": (0, 1)}), [("x", "y", 0.0)])
    f = PiecewisePdf.single(z, Expolynomial.constant(3.0, ("x", "y")))
    g, m = normalize(f)
    assert m == pytest.approx(1.5)
    assert mass(g) == pytest.approx(1.0, abs=1e-14)
    xs = np.linspace(-0.5, 1.5, 21)
    cdf = marginal_cdf(g, "x", xs)
    assert np.all(np.diff(cdf) >= -1e-14)
    assert cdf[0] == 0.0 and cdf[-1] == pytest.approx(1.0)
    # x is the minimum of two uniforms given x<=y: F(x) = 1-(1-x)^2
    inside = (xs >= 0) & (xs <= 1)
    assert np.allclose(cdf[inside], 1 - (1 - xs[inside]) ** 2, atol=1e-12)


def test_four_dimensional_simplex_mass():
    names = ("a", "b", "c", "d")
    z = intersect_all(DbmZone.box({v: (0, 1) for v in names}), [("b", v, 0.0) for v in names if v != "b"])
    f = PiecewisePdf.single(z, Expolynomial.constant(4.0, names))
    assert mass(f) == pytest.approx(1.0, abs=1e-12)
