import copy
from fractions import Fraction
from math import factorial

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from radiipoly import chebyshev as cheb
from radiipoly.interval import floats_from_hex, floats_to_hex
from radiipoly.problem import FloatProblem, Unknowns, spec_from_config
from radiipoly import validator as V

from conftest import lorenz_config, reference_trajectory, solve


# moments ------------------------------------------------------------------

def test_moment_examples():
    assert bool(V.moment_integral(1, 0, 1.0).contains(2.0))
    assert bool(V.moment_integral(0, 0, 1.0).contains(2.0))
    third = V.moment_integral(2, 0, 0.0)
    assert Fraction(float(third.lo)) <= Fraction(1, 3) <= Fraction(float(third.hi))
    m = V.moment_integral(1, 1, 1.0)
    assert Fraction(float(m.lo)) <= Fraction(-2, 3) <= Fraction(float(m.hi))
    with pytest.raises(ValueError):
        V.moment_integral(-1, 0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5), st.integers(0, 12), st.floats(-1, 1))
def test_moment_matches_adaptive_quadrature(e, l, x):
    import mpmath
    with mpmath.workdps(40):
        xm = mpmath.mpf(x)
        ref = mpmath.quad(lambda s: (xm - s) ** e * s ** l, [-1, xm])
        pts = [-1, 0, xm] if x > 0 else [-1, xm]
        ref_abs = mpmath.quad(lambda s: (xm - s) ** e * abs(s) ** l, pts)
        tiny = mpmath.mpf(10) ** -30
        enc = V.moment_integral(e, l, x)
        assert mpmath.mpf(float(enc.lo)) - tiny <= ref <= mpmath.mpf(float(enc.hi)) + tiny
        assert float(enc.hi) - float(enc.lo) <= 1e-13
        ub = V.moment_abs_upper(e, l, x)
        assert mpmath.mpf(ub) >= ref_abs - tiny


# residual enclosure -------------------------------------------------------

def test_constant_field_residual_encloses_zero():
    spec = spec_from_config({"field": "2; -1; 0.5", "u0": ["1", "0", "-3"], "tau": "1.5", "p": 1, "k": 2, "m": 6})
    t = spec.grid().node_times()
    vals = spec.u0_float()[:, None, None] + 1.5 * np.array([2.0, -1.0, 0.5])[:, None, None] * t[None]
    u = Unknowns(cheb.PiecewisePoly.from_values(spec.grid(), vals), 1.5)
    G = V.RigorousProblem(spec, u).residual()
    assert np.all(G.contains(0.0))
    assert np.max(G.mag()) < 1e-13


@pytest.mark.parametrize("p,k", [(2, 2), (3, 3)])
def test_polynomial_residual_contains_high_order_quadrature(p, k):
    spec, u = solve(lorenz_config(p=p, k=k, m=12))
    rng = np.random.default_rng(0)
    c = u.poly.coeffs * (1 + 1e-6 * rng.standard_normal(u.poly.coeffs.shape))
    u = Unknowns(cheb.PiecewisePoly(u.poly.grid, c), u.tau)
    G = V.RigorousProblem(spec, u).residual()
    ref = FloatProblem(spec, Q=40).residual(u.flatten(False))
    scale = np.max(np.abs(u.poly.values()))
    assert np.all(G.rad() <= 1e-12 * scale)
    assert np.all(np.abs(G.mid() - ref) <= G.rad() + 1e-13 * scale)


def test_non_polynomial_residual_small_and_consistent(abc_one):
    v, _ = abc_one
    rp = V.RigorousProblem(v.spec, v.u)
    G = rp.residual()
    ref = FloatProblem(v.spec, Q=40).residual(v.u.flatten(True))
    assert np.all(np.abs(G.mid() - ref) <= G.rad() + 1e-13)
    assert np.max(G.rad()) < 1e-9


# Y --------------------------------------------------------------------------

def test_bound_Y_examples():
    assert np.all(V.bound_Y(np.eye(3), np.zeros(3), np.zeros(3)) == 0.0)
    G = np.array([0.3, -0.2, 0.0])
    Y = V.bound_Y(np.eye(3), G, np.full(3, 0.01))
    assert np.all(Y >= np.abs(G) + 0.01) and np.all(Y <= (np.abs(G) + 0.01) * (1 + 1e-14) + 1e-300)
    Y2 = V.bound_Y(np.diag([2.0, 1.0]), np.array([0.1, 0.0]), np.array([0.01, 0.0]))
    assert Y2[0] == pytest.approx(0.22, rel=1e-14) and Y2[0] >= 0.22 and Y2[1] == 0.0


def test_Yinf_constant_field_vanishes():
    spec = spec_from_config({"field": "2; -1", "u0": ["1", "0"], "tau": "1.5", "p": 1, "k": 2, "m": 4})
    u = Unknowns(cheb.PiecewisePoly.from_values(spec.grid(), np.zeros((2, 4, 3))), 1.5)
    assert np.all(V.bound_Yinf(V.RigorousProblem(spec, u)) == 0.0)


def test_Yinf_zero_order_case_formula():
    # p = k + 1: no derivative, bound = C_k tau^p Delta^{k+1} sup |phi^[p]|
    spec, u = solve(lorenz_config(p=2, k=1, m=30))
    rp = V.RigorousProblem(spec, u)
    Yinf = V.bound_Yinf(rp)
    s = np.linspace(0, 1, 20001)
    fam = rp.fam
    from radiipoly.field import FLOAT, Evaluator
    vals = Evaluator(u.poly(s), FLOAT)
    sampled = np.array([np.max(np.abs(vals(fam.fields[2][i]))) for i in range(3)])
    hand = 1 / (2 * 4) * 0.2 ** 2 * (1 / 30) ** 2 * sampled
    assert np.all(Yinf >= hand * (1 - 1e-9))
    assert np.all(Yinf <= hand * 1.5)


def _g_of_ubar(spec, u, j, t):
    """g(u_bar)(t) on segment j by Gauss-Legendre quadrature (exact for these polynomial integrands)."""
    from radiipoly.field import FLOAT, Evaluator
    from radiipoly.problem import anchors_float
    p = spec.p
    fam = V.bootstrap(spec.field, p)
    a = anchors_float(spec, u.poly.coeffs)[:, j]
    t0 = spec.grid().mesh.breakpoints[j]
    xi, wi = np.polynomial.legendre.leggauss(40)
    out = []
    for tt in t:
        val = np.array([sum(u.tau ** q * (tt - t0) ** q / factorial(q) * float(Evaluator(a, FLOAT)(fam.fields[q][i]))
                            for q in range(p)) for i in range(spec.n)])
        s = t0 + (tt - t0) * (xi + 1) / 2
        us = u.poly(np.clip(s, t0, None))
        ev = Evaluator(us, FLOAT)
        for i in range(spec.n):
            f = ev(fam.fields[p][i]) * (tt - s) ** (p - 1) / factorial(p - 1)
            val[i] += u.tau ** p * (tt - t0) / 2 * np.dot(wi, f)
        out.append(val)
    return np.array(out).T


def test_Yinf_dominates_sampled_defect():
    spec, u = solve(lorenz_config(p=2, k=2, m=20))
    Yinf = V.bound_Yinf(V.RigorousProblem(spec, u))
    g = spec.grid()
    worst = np.zeros(3)
    for j in range(spec.m):
        nodes = g.node_times()[j]
        gv = _g_of_ubar(spec, u, j, nodes)
        c = cheb.coeffs_from_values(gv)
        tt = np.linspace(g.mesh.breakpoints[j], g.mesh.breakpoints[j + 1], 41)
        sref = 2 * (tt - tt[0]) / (tt[-1] - tt[0]) - 1
        interp = np.stack([cheb.clenshaw(c[i], sref) for i in range(3)])
        worst = np.maximum(worst, np.max(np.abs(_g_of_ubar(spec, u, j, tt) - interp), axis=1))
    assert np.all(Yinf >= worst)


# Z0, Z1 -------------------------------------------------------------------

def test_Z0_examples():
    Jd = sp.csc_matrix(np.diag([2.0, 4.0, 8.0]))
    A = np.diag([0.5, 0.25, 0.125])
    z = V.bound_Z0(A, Jd)
    assert np.all(z >= 0) and np.all(z < 1e-14)
    eps = 1e-3
    z2 = V.bound_Z0((1 + eps) * A, Jd)
    assert np.allclose(z2, eps, rtol=1e-9)
    rng = np.random.default_rng(0)
    J = sp.csc_matrix(rng.standard_normal((20, 20)) + 10 * np.eye(20))
    Ar = np.linalg.inv(J.toarray())
    Jr = sp.csr_matrix(np.full((20, 20), 1e-6))
    z3 = V.bound_Z0(Ar, J, Jr)
    assert np.all(z3 >= np.abs(Ar).sum(axis=1) * 20e-6 * (1 - 1e-12))


def test_Z1_zero_on_first_nodes_and_constant_fields(lorenz_short):
    rp = V.RigorousProblem(lorenz_short.spec, lorenz_short.u)
    rho = V.bound_Z1_rho(rp).reshape(rp.n, rp.m, rp.K)
    assert np.all(rho[:, :, 0] == 0.0) and np.all(rho[:, :, 1:] > 0)
    spec = spec_from_config({"field": "2; -1", "u0": ["1", "0"], "tau": "1.5", "p": 1, "k": 2, "m": 4})
    u = Unknowns(cheb.PiecewisePoly.from_values(spec.grid(), np.zeros((2, 4, 3))), 1.5)
    rpc = V.RigorousProblem(spec, u)
    assert np.all(V.bound_Z1(rpc, np.eye(spec.size)) == 0.0)


def test_Z1_rho_hand_value(lorenz_short):
    rp = V.RigorousProblem(lorenz_short.spec, lorenz_short.u)
    rho = V.bound_Z1_rho(rp).reshape(rp.n, rp.m, rp.K)
    j, l = 5, rp.K - 1
    # tau^2 (t_jl - t_j)^2 / 2 times the sampled row sum of |D phi^[2]| along the segment
    from radiipoly.field import FLOAT, Evaluator
    g = rp.grid
    s = np.linspace(g.mesh.breakpoints[j], g.mesh.breakpoints[j + 1], 401)
    ev = Evaluator(lorenz_short.u.poly(s), FLOAT)
    for i in range(3):
        row = sum(np.abs(ev(rp.fam.partial(2, i, (a,))) * np.ones(s.size)) for a in range(3))
        hand = 0.2 ** 2 * (g.mesh.breakpoints[j + 1] - g.mesh.breakpoints[j]) ** 2 / 2 * np.max(row)
        assert hand <= rho[i, j, l] <= 1.2 * hand


# Z2, Z_inf ------------------------------------------------------------------

def test_linear_field_has_no_second_order_terms():
    spec = spec_from_config({"field": "-x2; x1", "u0": ["1", "0"], "tau": "1", "p": 2, "k": 2, "m": 8})
    spec, u = solve(spec.to_config())
    rp = V.RigorousProblem(spec, u)
    ho = V.higher_order_terms(rp, np.eye(spec.size), 1.0, 1e-2)
    assert all(np.all(v == 0.0) for k, v in ho.finite.items() if k >= 2)


def test_constant_field_has_no_tail_terms():
    spec = spec_from_config({"field": "2; -1", "u0": ["1", "0"], "tau": "1.5", "p": 1, "k": 2, "m": 4})
    u = Unknowns(cheb.PiecewisePoly.from_values(spec.grid(), np.zeros((2, 4, 3))), 1.5)
    rp = V.RigorousProblem(spec, u)
    tail = V.bound_Zinf(rp, 1.0, 1e-2)
    assert all(np.all(v == 0.0) for v in tail.values())


def test_linear_scalar_tail_hand_formula():
    lam_, tau, m, rinf = -0.7, 1.3, 10, 2.0
    spec = spec_from_config({"field": f"{lam_}*x1", "u0": ["1"], "tau": str(tau), "p": 1, "k": 1, "m": m})
    spec, u = solve(spec.to_config())
    rp = V.RigorousProblem(spec, u)
    tail = V.bound_Zinf(rp, rinf, 1e-2)
    hand = tau * 0.5 * (1 / m) * abs(lam_) * (1.0 + rinf)
    assert tail[1][0] == pytest.approx(hand, rel=1e-12) and tail[1][0] >= hand
    assert set(tail) == {1}


def test_lorenz_third_order_tensor_in_Z2():
    spec, u = solve(lorenz_config(p=2, k=2, m=10))
    rp = V.RigorousProblem(spec, u)
    ho = V.higher_order_terms(rp, np.eye(spec.size), 1.0, 1e-2)
    assert set(ho.finite) == {2, 3}
    # the cubic coefficient comes from |D^3 phi^[2]|(1,1,1): 0, 2 (from -2 x z'...) , 6 per component
    third = np.array([float(rp.tensor_norm(2, i, 3, rp._ev_U).max()) for i in range(3)])
    assert third[0] == 0.0 and third[2] == pytest.approx(6.0)


# r_inf and r ---------------------------------------------------------------

def _lin(c, e=0.0, z0=0.0, z1=1.0, lam=1.0):
    return V.LinearParts(np.zeros(1), np.array([z0]), np.array([z1]), np.zeros(1), np.array([c]), np.array([e]), lam)


def test_choose_rinf_examples():
    ch = V.choose_rinf(_lin(0.5, z1=0.1))
    assert ch.feasible and ch.lo == pytest.approx(1.0) and ch.rinf > 1.0
    assert not V.choose_rinf(_lin(1.0)).feasible
    assert not V.choose_rinf(_lin(0.5, z1=2.0)).feasible
    cands = V.rinf_candidates(ch, 7)
    assert cands[0] == pytest.approx(ch.rinf) and all(ch.lo < r < ch.hi for r in cands)


def test_finish_scalar_example():
    P = V.RadiiPolynomials(np.array([0.1]), {1: np.array([0.5])}, np.array([0.0]), {1: np.array([0.1])}, 1.0)
    assert P.holds(0.25)
    assert not P.holds(0.19)
    f = V.finish(P, 1.0)
    assert f.success and 0.2 < f.r <= 0.25
    Z = V.RadiiPolynomials(np.zeros(2), {1: np.array([0.3, 0.9]), 2: np.array([1.0, 1.0])}, np.zeros(2),
                           {1: np.array([0.2, 0.0])}, 1.0)
    assert Z.holds(1e-8) and V.finish(Z, 1e-2).success
    bad = V.RadiiPolynomials(np.array([0.1]), {1: np.array([0.5]), 2: np.array([100.0])}, np.array([0.0]),
                             {1: np.array([0.1])}, 1.0)
    fb = V.finish(bad, 1.0)
    assert not fb.success and fb.worst[0] == "finite"


# end to end --------------------------------------------------------------

def test_small_lorenz_proof(lorenz_short):
    v = lorenz_short
    assert v.success and 0 < v.r <= v.spec.rhat
    assert v.polys.holds(v.r)
    assert bool(v.tau_enclosure.contains(0.2))


def _ball_contains_reference(v, samples=4001):
    """Node values within r and all sampled times within (Lambda_k + r_inf) r of the reference."""
    spec, u = v.spec, v.u
    t_nodes = spec.grid().node_times().ravel()
    ref_nodes = reference_trajectory(spec, u.tau, t_nodes)
    node_err = np.max(np.abs(ref_nodes - u.poly(t_nodes)))
    t = np.linspace(0, 1, samples)
    off_err = np.max(np.abs(reference_trajectory(spec, u.tau, t) - u.poly(t)))
    return node_err, off_err


def test_validated_ball_contains_reference(lorenz_short):
    v = lorenz_short
    node_err, off_err = _ball_contains_reference(v)
    assert node_err <= v.r
    assert off_err <= (v.lam + v.rinf) * v.r


def test_certificate_accept_and_tamper(tmp_path, lorenz_short):
    cert = V.make_certificate(lorenz_short)
    path = tmp_path / "c.json"
    V.write_certificate(cert, path)
    c = V.read_certificate(path)
    ok = V.verify_certificate(c)
    assert ok.accepted and ok.proved
    small = copy.deepcopy(c)
    small["r"] = (float.fromhex(c["r"]) / 10).hex()
    assert not V.verify_certificate(small).accepted
    pert = copy.deepcopy(c)
    co = floats_from_hex(pert["coeffs"])
    co[10] += 1e-3
    pert["coeffs"] = floats_to_hex(co)
    assert not V.verify_certificate(pert).accepted
    cfg = copy.deepcopy(c)
    cfg["config"]["m"] = 41
    assert not V.verify_certificate(cfg).accepted
    ver = copy.deepcopy(c)
    ver["version"] = 99
    assert not V.verify_certificate(ver).accepted


def test_certificate_without_stored_inverse(lorenz_short):
    cert = V.make_certificate(lorenz_short)
    cert["A"] = None
    assert V.verify_certificate(cert).proved
    cert["J_digest"] = "0" * 64
    v = V.verify_certificate(cert)
    assert not v.accepted and "digest" in v.reason


def test_failed_proof_is_recorded():
    spec, u = solve(lorenz_config(p=1, k=1, m=40))
    v = V.validate(spec, u)
    assert not v.success and v.message
    cert = V.make_certificate(v)
    verdict = V.verify_certificate(cert)
    assert verdict.accepted and not verdict.proved
