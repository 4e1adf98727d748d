from fractions import Fraction
from math import factorial, log, pi

import numpy as np
import numpy.polynomial.chebyshev as npcheb
import pytest
from hypothesis import given, settings, strategies as st

from radiipoly import chebyshev as cheb
from radiipoly.interval import Interval


def test_nodes_small_cases():
    assert np.allclose(cheb.cheb_points_float(2), [-1.0, 0.0, 1.0], atol=1e-16)
    assert np.allclose(cheb.cheb_points_float(1), [-1.0, 1.0])
    g = cheb.make_grid(2, 1)
    assert np.allclose(g.node_times(), [[0.0, 0.5], [0.5, 1.0]])
    x = cheb.cheb_points(3)
    assert np.all(x.contains(np.cos(np.pi * np.arange(3, -1, -1) / 3)))


def test_basis_transforms_examples():
    assert np.allclose(cheb.coeffs_from_values(np.array([1.0, -1.0, 1.0])), [0, 0, 1], atol=1e-15)
    assert np.allclose(cheb.coeffs_from_values(np.full(5, 2.5)), [2.5, 0, 0, 0, 0], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2 ** 31))
def test_round_trip_against_vandermonde(k, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(k + 1)
    x = cheb.cheb_points_float(k)
    vals = npcheb.chebvander(x, k) @ c
    oracle = np.linalg.solve(npcheb.chebvander(x, k), vals)
    got = cheb.coeffs_from_values(vals)
    assert np.allclose(got, oracle, atol=1e-12)
    enc = cheb.coeffs_from_values(Interval.point(vals))
    assert np.all(enc.contains(got)) or np.allclose(enc.mid(), got, atol=1e-13)
    back = cheb.values_from_coeffs(Interval.point(got))
    assert np.all(back.contains(cheb.values_from_coeffs(got)))


def test_clenshaw_examples():
    assert cheb.clenshaw(np.array([0.0, 0.0, 1.0]), 0.5) == pytest.approx(-0.5)
    assert cheb.clenshaw(np.array([3.25]), 0.7) == 3.25
    rng_enc = cheb.clenshaw(Interval.point(np.array([1.0, 0.5])), Interval(-1.0, 1.0))
    assert float(rng_enc.lo) <= 0.5 and float(rng_enc.hi) >= 1.5


def test_series_algebra_examples():
    assert np.allclose(cheb.cheb_mul(np.array([0.0, 1.0]), np.array([0.0, 1.0])), [0.5, 0, 0.5])
    assert np.allclose(cheb.cheb_derivative(np.array([0.0, 0.0, 1.0])), [0.0, 4.0])
    t1 = Interval.point(np.array([0.0, 1.0]))
    cube = cheb.cheb_mul(cheb.cheb_mul(t1, t1), t1)
    v = cheb.clenshaw(cube, Interval.point(0.3))
    assert bool(v.contains(Fraction(27, 1000).__float__())) or float(v.lo) <= 0.027 <= float(v.hi)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8), st.integers(0, 2 ** 31))
def test_mul_and_calculus_match_numpy(la, lb, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(la + 1), rng.standard_normal(lb + 1)
    assert np.allclose(cheb.cheb_mul(a, b), npcheb.chebmul(a, b)[: la + lb + 1], atol=1e-12)
    d = cheb.cheb_derivative(a)
    assert np.allclose(npcheb.chebval(0.3, d), npcheb.chebval(0.3, npcheb.chebder(a)), atol=1e-10)
    I = cheb.cheb_antiderivative(a)
    assert abs(npcheb.chebval(-1.0, I)) < 1e-12
    assert np.allclose(npcheb.chebval(0.4, cheb.cheb_derivative(I)), npcheb.chebval(0.4, a), atol=1e-10)


def test_repeated_integral_matches_quadrature():
    from scipy.integrate import quad
    a = np.array([0.3, -1.2, 0.7, 0.25])
    for p in (1, 2, 3):
        ser = cheb.repeated_integral(a, p)
        for s in (-0.4, 0.2, 1.0):
            ref, _ = quad(lambda r: (s - r) ** (p - 1) / factorial(p - 1) * npcheb.chebval(r, a), -1, s,
                          epsabs=1e-13, epsrel=1e-12, limit=200)
            assert npcheb.chebval(s, ser) == pytest.approx(ref, abs=1e-12)


def test_sup_bound_examples():
    assert cheb.sup_bound(np.array([1.0, 0.5])) == pytest.approx(1.5)
    assert cheb.sup_bound(np.zeros(4)) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_sup_bound_dominates_sampling(k, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(k + 1)
    s = np.linspace(-1, 1, 10_000)
    sampled = np.max(np.abs(npcheb.chebval(s, c)))
    assert cheb.sup_bound(c) >= sampled
    assert cheb.sup_bound(c, "node_max", cheb.lebesgue_constant(k)) >= sampled * (1 - 1e-12)


@pytest.mark.parametrize("k", range(1, 11))
def test_lebesgue_dominates_sampling(k):
    lam = cheb.lebesgue_constant(k)
    s = np.linspace(-1, 1, 200_001)
    sampled = float(np.max(cheb.lagrange_abs_sum_float(k, s)))
    assert float(lam.hi) >= sampled
    assert float(lam.hi) <= 1 + 2 / pi * log(k + 1) + 1e-12


def test_lebesgue_small_cases():
    one = cheb.lebesgue_constant(1)
    assert float(one.lo) <= 1.0 <= float(one.hi) and float(one.hi) - 1.0 <= 4e-16
    three = cheb.lebesgue_constant(3)
    assert float(three.lo) <= 5 / 3 <= float(three.hi)
    assert Fraction(float(three.lo)) <= Fraction(5, 3) <= Fraction(float(three.hi))
    assert float(cheb.lebesgue_constant(6).hi) <= 1 + 2 / pi * log(7)


def test_interpolation_constants_examples():
    assert cheb.interp_error_constant(1).contains(1 / 8)
    assert bool(cheb.interp_error_constant(3).contains(1 / 1536))
    for k in range(1, 7):
        b = cheb.interp_constants(k, 1).branch_b
        assert bool(b.contains(0.5))
    c21 = cheb.interp_constants(2, 1)
    assert float(c21.branch_a.lo) > 0.5
    assert bool(c21.tildeC.contains(0.5))
    assert cheb.c_opt(2, 3) is not None and bool(cheb.c_opt(2, 3).contains(1 / 96))
    with pytest.raises(ValueError):
        cheb.c_opt(2, 4)


def _interp_error(f, k):
    x = cheb.cheb_points_float(k)
    c = cheb.coeffs_from_values(f(x))
    s = np.linspace(-1, 1, 4001)
    return np.max(np.abs(f(s) - npcheb.chebval(s, c)))


_FUNCS = {
    # (f, sup of |f^(j)| on [-1,1] as a function of j)
    "sin3": (lambda x: np.sin(3 * x + 0.4), lambda j: 3.0 ** j),
    "exp": (lambda x: np.exp(1.5 * x), lambda j: 1.5 ** j * np.exp(1.5)),
    "cos7": (lambda x: np.cos(7 * x), lambda j: 7.0 ** j),
    "runge": (lambda x: 1 / (1 + 4 * (x - 3) ** 2), None),
}


@pytest.mark.parametrize("name", ["sin3", "exp", "cos7"])
@pytest.mark.parametrize("k", range(1, 7))
def test_interpolation_bounds_hold(name, k):
    f, dsup = _FUNCS[name]
    err = _interp_error(f, k)
    width = 2.0
    bound_full = float(cheb.interp_error_constant(k).hi) * width ** (k + 1) * dsup(k + 1)
    assert err <= bound_full
    for l in range(1, k + 1):
        tc = float(cheb.interp_constants(k, l).tildeC.hi)
        assert err <= tc * width ** l * dsup(l)


def test_interpolation_bound_on_rational_function():
    # the derivative sup is sampled (monotone on [-1,1], so the endpoint sample is exact)
    f, _ = _FUNCS["runge"]
    import mpmath
    for k in range(1, 7):
        err = _interp_error(f, k)
        sup = max(abs(mpmath.diff(lambda t: 1 / (1 + 4 * (t - 3) ** 2), x, k + 1)) for x in np.linspace(-1, 1, 201))
        assert err <= float(cheb.interp_error_constant(k).hi) * 2.0 ** (k + 1) * float(sup)


def test_piecewise_poly_evaluation():
    g = cheb.make_grid(4, 3)
    f = lambda t: np.sin(4 * t)
    vals = f(g.node_times())[None]
    pp = cheb.PiecewisePoly.from_values(g, vals)
    t = np.linspace(0, 1, 50)
    assert np.max(np.abs(pp(t)[0] - f(t))) < 1e-3
    assert np.allclose(pp(g.node_times().ravel())[0], vals.ravel(), atol=1e-13)
