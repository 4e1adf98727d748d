"""Rigorous validation of a numerical zero of the node equations.

Everything here is evaluated in interval arithmetic (or with explicit
rounding-error bounds for large float products).  The finite part of the
unknown is represented by node values, the tail by its sup norm scaled by
1/r_inf, and tau (when unknown) by its deviation scaled by 1/tau_weight.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import chebyshev as npcheb

from . import __version__
from . import chebyshev as cheb
from .field import CHEB_INTERVAL, INTERVAL, TAYLOR, BootstrapFamily, Evaluator, bootstrap, taylor_mul, \
    tensor_abs_one_norm
from .interval import (Interval, abs_matvec_upper, as_interval, floats_from_hex, floats_to_hex, gamma,
                       interval_from_text, interval_to_text, matmul, pow_int)
from .problem import ProblemSpec, Unknowns, anchors_interval, row_index, spec_from_config
from .solver import numerical_inverse

log = logging.getLogger(__name__)

CERT_VERSION = 1
_U = 2.0 ** -53
A_STORE_LIMIT = 2000


class ValidationError(RuntimeError):
    pass


def _up(x):
    return np.nextafter(np.asarray(x, dtype=np.float64), np.inf)


def _inflate(x, k: int = 1):
    """Upper bound for a nonnegative float quantity carrying k rounding errors."""
    x = np.asarray(x, dtype=np.float64)
    return _up(x * (1.0 + gamma(k + 2)) + 1e-300)


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------

def moment_integral(e: int, l: int, x) -> Interval:
    """Enclosure of int_{-1}^{x} (x - s)^e s^l ds (exact rational expansion)."""
    if e < 0 or l < 0:
        raise ValueError("need e >= 0 and l >= 0")
    x = as_interval(x)
    total = Interval.zeros(x.shape)
    for a in range(e + 1):
        d = a + l + 1
        c = Fraction(comb(e, a) * (-1) ** a, d)
        term = pow_int(x, e + l + 1) - pow_int(x, e - a) * float((-1) ** d)
        total = total + term * Interval.from_fraction(c)
    return total


def moment_abs_upper(e: int, l: int, x: float) -> float:
    """Upper bound of int_{-1}^{x} (x - s)^e |s|^l ds (nondecreasing in x)."""
    x = float(x)
    if x <= 0:
        val = moment_integral(e, l, x) * float((-1) ** l)
        return float(np.asarray(val.hi))
    xi = Interval.point(x)
    right = pow_int(xi, e + l + 1) * Interval.from_fraction(Fraction(factorial(e) * factorial(l),
                                                                     factorial(e + l + 1)))
    left = Interval.zeros(())
    for a in range(e + 1):
        left = left + pow_int(xi, e - a) * Interval.from_fraction(Fraction(comb(e, a), a + l + 1))
    return float(np.asarray((left + right).hi))


# --------------------------------------------------------------------------
# Taylor expansion tables for Chebyshev polynomials
# --------------------------------------------------------------------------

def _taylor_tables(k: int, k0: int):
    """(T0, Ts0): monomial coefficients of T_n at 0 (r = 0..k0), and enclosures of
    T_n^{(r)}(s)/r! over s in [-1, 1] (r = 0..k0+1)."""
    T0 = np.zeros((k0 + 1, k + 1))
    for n in range(k + 1):
        mono = npcheb.cheb2poly(np.eye(k + 1)[n])
        T0[:min(len(mono), k0 + 1), n] = mono[:k0 + 1]
    lo = np.zeros((k0 + 2, k + 1))
    hi = np.zeros((k0 + 2, k + 1))
    for n in range(k + 1):
        for r in range(min(n, k0 + 1) + 1):
            if n == 0:
                lo[r, n] = hi[r, n] = 1.0 if r == 0 else 0.0
                continue
            mag = Fraction(1)
            for j in range(r):
                mag *= Fraction(n * n - j * j, 2 * j + 1)
            mag /= factorial(r)
            ub = float(np.asarray(Interval.from_fraction(mag).hi))
            lo[r, n], hi[r, n] = -ub, ub
    return T0, Interval(lo, hi)


def _apply_rows(M: Interval | np.ndarray, c: np.ndarray) -> Interval:
    """(..., R) enclosure of sum_n M[r, n] c[..., n] for float coefficients c."""
    Mi = as_interval(M)
    return (Interval.point(c)[..., None, :] * Mi).sum(axis=-1)


# --------------------------------------------------------------------------
# rigorous residual and Jacobian
# --------------------------------------------------------------------------

@dataclass
class QuadratureCfg:
    k0: int = 8


class RigorousProblem:
    """Interval data of the node equations at a float candidate (coefficients, tau_bar)."""

    def __init__(self, spec: ProblemSpec, u: Unknowns, fam: BootstrapFamily | None = None,
                 quad: QuadratureCfg | None = None):
        self.spec = spec
        self.fam = fam or bootstrap(spec.field, spec.p)
        self.quad = quad or QuadratureCfg(spec.k0)
        self.u = u
        self.grid = u.poly.grid
        n, m, k, p = spec.n, spec.m, spec.k, spec.p
        self.n, self.m, self.k, self.p, self.K = n, m, k, p, k + 1
        self.N = n * m * (k + 1)
        self.size = spec.size
        self.w = spec.tau_weight if spec.tau_unknown else 0.0
        self.coeffs = u.poly.coeffs
        self.tau_bar = float(u.tau)
        self.tau = Interval.point(self.tau_bar) if spec.tau_unknown else spec.tau.interval()
        self.x = cheb.cheb_points(k)
        self.V = cheb.value_matrix(k)
        self.Vi = cheb.coeff_matrix(k)
        self.delta = self.grid.mesh.widths()                        # (m,)
        self.H = self.delta * 0.5
        self.h = self.grid.offsets()                                # (m, K)
        self.anchors = anchors_interval(spec, self.coeffs)          # (n, m)
        self.U = u.poly.segment_range()                             # (n, m)
        self.lam = cheb.lebesgue_constant(k)
        self.copt = cheb.c_opt(k, p)
        self.Ck = cheb.interp_error_constant(k)
        self.polynomial = spec.field.is_polynomial
        self._ev_anchor = Evaluator(self.anchors, INTERVAL)
        self._ev_U = Evaluator(self.U, INTERVAL)
        if self.polynomial:
            self._ev_series = Evaluator(Interval.point(self.coeffs), CHEB_INTERVAL)
        else:
            k0 = max(self.quad.k0, k)
            self.k0 = k0
            T0, Ts0 = _taylor_tables(k, k0)
            self.T0, self.Ts0 = T0, Ts0
            self._ev_t0 = Evaluator(_apply_rows(T0, self.coeffs), TAYLOR)
            self._ev_ts0 = Evaluator(_apply_rows(Ts0, self.coeffs), TAYLOR)
            xs = self.x
            self.mom = Interval.stack([moment_integral(p - 1, r, xs) for r in range(k0 + 1)], axis=-1)  # (K, k0+1)
            self.mabs = np.array([moment_abs_upper(p - 1, k0 + 1, float(xh)) for xh in np.asarray(xs.hi)])
        self._psi_int = None

    # integrals I_p[f](x_l) -------------------------------------------------
    def _int_series(self, f: Interval) -> Interval:
        """I_p[f](x_l) for Chebyshev series f (..., Kf) -> (..., K)."""
        F = cheb.repeated_integral(f, self.p)
        return cheb.clenshaw(F[..., None, :], self.x)

    def _int_taylor(self, f0: Interval, fs0_last: Interval) -> Interval:
        """I_p[f](x_l) from Taylor data: f0 (..., k0+1) at 0 and the (k0+1)-th coefficient over [-1,1]."""
        main = (f0[..., None, :] * self.mom).sum(axis=-1)           # (..., K)
        rem = fs0_last.mag()[..., None] * self.mabs                  # (..., K)
        fac = float(factorial(self.p - 1))
        return (main + Interval(-_up(rem), _up(rem))) / fac

    def psi_integrals(self) -> Interval:
        """I_p[(phi^[p])_i(u_bar)](x_l), shape (n, m, K)."""
        if self._psi_int is None:
            out = []
            for i in range(self.n):
                e = self.fam.fields[self.p][i]
                out.append(self._integral_of(e))
            self._psi_int = Interval.stack(out)
        return self._psi_int

    def _integral_of(self, e, extra=None) -> Interval:
        """I_p[e(u_bar) * extra](x_l) where ``extra`` optionally indexes T_n (adds an axis)."""
        if self.polynomial:
            f = as_interval(self._ev_series(e))                          # (m, Kf)
            if f.ndim == 1:
                f = f[None, :] + Interval.zeros((self.m, 1))
            if extra is not None:
                f = cheb.cheb_mul(f[:, None, :], np.eye(self.K)[None, :, :])
            return self._int_series(f)
        f0 = as_interval(self._ev_t0(e))
        fs = as_interval(self._ev_ts0(e))
        if extra is not None:
            t0 = np.zeros((self.K, self.k0 + 1))
            t0[:, :] = self.T0.T
            f0 = taylor_mul(f0[:, None, :], Interval.point(t0)[None, :, :])
            fs = taylor_mul(fs[:, None, :], self.Ts0.T[None, :, :])
        return self._int_taylor(f0, fs[..., -1])

    # residual ---------------------------------------------------------------
    def residual(self) -> Interval:
        """Enclosure of the node residual (n*m*K entries, plus the phase row)."""
        spec, fam, p = self.spec, self.fam, self.p
        G = Interval.zeros((self.n, self.m, self.K))
        for q in range(p):
            w = pow_int(self.tau, q) * pow_int(self.h, q) / float(factorial(q))   # (m, K)
            for i in range(self.n):
                a = as_interval(self._ev_anchor(fam.fields[q][i])) + Interval.zeros((self.m,))
                G = _set(G, i, G[i] + w * a[:, None])
        scale = pow_int(self.tau, p) * pow_int(self.H, p)                          # (m,)
        G = G + self.psi_integrals() * scale[None, :, None]
        vals = cheb.values_from_coeffs(Interval.point(self.coeffs))
        G = G - vals
        flat = G.reshape(-1)
        if spec.tau_unknown:
            flat = Interval.concatenate([flat, self.phase_residual()[None]])
        return flat

    def phase_residual(self) -> Interval:
        u0 = cheb.values_from_coeffs(Interval.point(self.coeffs[:, 0, :]))[:, 0]  # (n,)
        v0 = self.spec.phase_direction()
        a0 = self.spec.phase_anchor()
        return ((u0 - a0) * v0).sum()

    def dG_dtau(self) -> Interval:
        fam, p = self.fam, self.p
        D = Interval.zeros((self.n, self.m, self.K))
        for q in range(1, p):
            w = pow_int(self.tau, q - 1) * pow_int(self.h, q) * float(q) / float(factorial(q))
            for i in range(self.n):
                a = as_interval(self._ev_anchor(fam.fields[q][i])) + Interval.zeros((self.m,))
                D = _set(D, i, D[i] + w * a[:, None])
        scale = pow_int(self.tau, p - 1) * pow_int(self.H, p) * float(p)
        return D + self.psi_integrals() * scale[None, :, None]

    # Jacobian in value coordinates -----------------------------------------
    def jacobian(self):
        """Enclosure of the exact Jacobian in value coordinates as (mid, rad) sparse matrices.

        The tau column is multiplied by the tau weight.
        """
        spec, fam = self.spec, self.fam
        n, m, K, p = self.n, self.m, self.K, self.p
        rows, cols, los, his = [], [], [], []
        jj = np.arange(m)
        ll = np.arange(K)
        scale = pow_int(self.tau, p) * pow_int(self.H, p)                          # (m,)

        def put(r, c, val: Interval):
            shape = val.shape
            rows.append(np.broadcast_to(r, shape).ravel())
            cols.append(np.broadcast_to(c, shape).ravel())
            los.append(val.lo.ravel())
            his.append(val.hi.ravel())

        Vi = self.Vi
        for i in range(n):
            for i2 in range(n):
                e = fam.partial(p, i, (i2,))
                if e.terms:
                    B = self._integral_of(e, extra=True)                   # (m, K_n, K_l)
                    B = B * scale[:, None, None]
                    # value coordinates: block[j, l, l'] = sum_n B[j, n, l] Vi[n, l']
                    blk = (B.transpose(0, 2, 1)[:, :, :, None] * Vi[None, None, :, :]).sum(axis=2)
                else:
                    blk = Interval.zeros((m, K, K))
                if i == i2:
                    blk = blk - Interval.point(np.eye(K))[None]
                r = row_index(spec, i, jj[:, None, None], ll[None, :, None])
                c = row_index(spec, i2, jj[:, None, None], ll[None, None, :])
                put(r, c, blk)

        segs = jj if spec.variant != "ivp" else jj[1:]
        src = np.concatenate([[m - 1], jj[:-1]])
        for i in range(n):
            for i2 in range(n):
                coef = Interval.zeros((m, K))
                for q in range(p):
                    e = fam.partial(q, i, (i2,))
                    if not e.terms:
                        continue
                    d = as_interval(self._ev_anchor(e)) + Interval.zeros((m,))
                    w = pow_int(self.tau, q) * pow_int(self.h, q) / float(factorial(q))
                    coef = coef + w * d[:, None]
                if len(segs) == 0:
                    continue
                r = row_index(spec, i, segs[:, None], ll[None, :])
                c = row_index(spec, i2, src[segs][:, None], np.full((1, K), K - 1))
                put(r, c, coef[segs])

        if spec.tau_unknown:
            dcol = self.dG_dtau().reshape(-1) * spec.tau_weight
            put(np.arange(self.N), np.full(self.N, self.N), dcol)
            v0 = self.spec.phase_direction()
            put(np.full(n, self.N), row_index(spec, np.arange(n), 0, 0), Interval.point(v0))

        r = np.concatenate(rows)
        c = np.concatenate(cols)
        lo = np.concatenate(los)
        hi = np.concatenate(his)
        iv = Interval(lo, hi)
        mid, rad = iv.midrad()
        shape = (self.size, self.size)
        Jm = sp.csr_matrix((mid, (r, c)), shape=shape)
        Jr = sp.csr_matrix((rad, (r, c)), shape=shape)
        Ja = sp.csr_matrix((np.abs(mid), (r, c)), shape=shape)
        # duplicate entries were summed in float: cover that rounding in the radius
        Jr = Jr + Ja * (4 * _U)
        Jr.data = _up(Jr.data)
        Jm.sum_duplicates()
        Jr.sum_duplicates()
        Jm.sort_indices()
        Jr.sort_indices()
        return Jm, Jr

    # tensors over boxes -----------------------------------------------------
    def tensor_norm(self, q: int, i: int, order: int, ev: Evaluator) -> np.ndarray:
        return np.asarray(tensor_abs_one_norm(self.fam, q, i, order, None, ev=ev).hi)

    def curve_norm(self, q: int, i: int, order: int) -> np.ndarray:
        """Upper bound, per segment, of sup_s |D^order phi^[q]_i(u_bar(s))| (summed over index tuples).

        Polynomial fields compose along the curve in Chebyshev form, which is tighter
        than the box hull of the segment; other fields fall back to the box.
        """
        box = np.broadcast_to(self.tensor_norm(q, i, order, self._ev_U), (self.m,))
        if not self.polynomial:
            return box
        total = np.zeros(self.m)
        for idx, mult in self.fam.multisets(order):
            e = self.fam.partial(q, i, idx)
            if not e.terms:
                continue
            f = as_interval(self._ev_series(e))
            sup = np.asarray(abs(f).sum(axis=-1).hi) * float(mult)
            total = _up(total + np.broadcast_to(sup, (self.m,)))
        return np.minimum(box, total)

    def psi_series(self, i: int) -> Interval:
        f = as_interval(self._ev_series(self.fam.fields[self.p][i]))
        if f.ndim == 1:
            f = f[None, :] + Interval.zeros((self.m, 1))
        return f


def _set(G: Interval, i: int, val: Interval) -> Interval:
    G = G.copy()
    G[i] = val
    return G


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------

def bound_Y(A, G_hat, G_eps=None) -> np.ndarray:
    """Upper bound of |A G| for G in G_hat +- G_eps (or an Interval G)."""
    G = G_hat if isinstance(G_hat, Interval) else Interval.point(G_hat).inflate(
        0.0 if G_eps is None else np.asarray(G_eps, dtype=np.float64))
    return np.asarray(matmul(A, G).mag())


def bound_Yinf(rp: RigorousProblem) -> np.ndarray:
    """Upper bound of the interpolation defect of g(u_bar), per component."""
    k, p = rp.k, rp.p
    order = k + 1 - p
    taup = pow_int(rp.tau, p)
    dp = pow_int(rp.delta, p)                                                  # (m,)
    out = np.zeros(rp.n)
    for i in range(rp.n):
        if rp.polynomial:
            f = rp.psi_series(i)
            for _ in range(order):
                f = cheb.cheb_derivative(f)
            sup = abs(f).sum(axis=-1) * float(2 ** order)                      # (m,)
        else:
            e = rp.fam.fields[p][i]
            fs = as_interval(rp._ev_ts0(e))
            sup = Interval.point(fs[..., order].mag()) * float(2 ** order * factorial(order))
        val = rp.Ck * taup * (dp * sup)
        out[i] = float(np.max(val.hi))
    return out


def bound_Z0(A: np.ndarray, Jm, Jr=None, block: int = 512) -> np.ndarray:
    """Upper bound of the row sums of |I - A J| for J in Jm +- Jr."""
    Jm = sp.csc_matrix(Jm)
    N = Jm.shape[0]
    if Jm.shape != (N, N) or A.shape != (N, N):
        raise ValueError("dimension mismatch")
    nnz_col = int(np.max(np.diff(Jm.indptr))) if N else 0
    absJ1 = np.asarray(abs(Jm) @ np.ones(N)).ravel()
    v = _inflate(absJ1, nnz_col) * gamma(nnz_col + 1)
    if Jr is not None:
        v = v + np.asarray(sp.csr_matrix(Jr) @ np.ones(N)).ravel()
    v = _inflate(v, 2)
    JmT = sp.csr_matrix(Jm.T)
    out = np.empty(N)
    for s in range(0, N, block):
        e = min(N, s + block)
        Ab = A[s:e]
        P = np.asarray((JmT @ Ab.T).T)
        P = -P
        P[np.arange(e - s), np.arange(s, e)] += 1.0
        out[s:e] = np.sum(np.abs(P), axis=1)
    out = _inflate(out, N + 2)
    out = _inflate(out + abs_matvec_upper(A, v), 2)
    return out


def bound_Z1_rho(rp: RigorousProblem) -> np.ndarray:
    """rho / (r_inf r): tau^p h^p/p! max_{U_j} |D phi^[p]_i| 1, zero on the phase row."""
    p = rp.p
    w = pow_int(rp.tau, p) * pow_int(rp.h, p) / float(factorial(p))         # (m, K)
    rho = np.zeros((rp.n, rp.m, rp.K))
    for i in range(rp.n):
        d1 = rp.curve_norm(p, i, 1)                                           # (m,)
        rho[i] = np.asarray((w * Interval.point(np.broadcast_to(d1, (rp.m,)))[:, None]).hi)
    out = rho.reshape(-1)
    if rp.spec.tau_unknown:
        out = np.concatenate([out, [0.0]])
    return out


def bound_Z1(rp: RigorousProblem, A: np.ndarray) -> np.ndarray:
    """Coefficient of r_inf * r in the finite-part bound: |A| rho."""
    return abs_matvec_upper(A, bound_Z1_rho(rp))


def _pad_phase(rp, vec):
    return np.concatenate([vec, [0.0]]) if rp.spec.tau_unknown else vec


def _mean_value_S(rp: RigorousProblem, q: int, ev: Evaluator, taubox: Interval, nu: float, w: float) -> np.ndarray:
    """S_q per component: q(q-1)|tau|^{q-2} w^2 |phi^[q]| + 2q|tau|^{q-1} w nu |D phi^[q]|1
    + |tau|^q nu^2 |D^2 phi^[q]|(1,1), as upper floats with shape (n, m)."""
    t = Interval.point(taubox.mag())
    out = []
    for i in range(rp.n):
        s = Interval.point(rp.tensor_norm(q, i, 2, ev)) * pow_int(t, q) * (nu * nu)
        if w > 0:
            s = s + Interval.point(rp.tensor_norm(q, i, 1, ev)) * pow_int(t, q - 1) * (2.0 * q * w * nu)
            if q >= 2:
                s = s + Interval.point(rp.tensor_norm(q, i, 0, ev)) * pow_int(t, q - 2) * (q * (q - 1) * w * w)
        out.append(np.broadcast_to(np.asarray(s.hi), (rp.m,)))
    return np.stack(out)


@dataclass
class HigherOrder:
    """Nonlinear parts of the bounds for one r_inf: power -> coefficient vectors."""

    finite: dict
    tail: dict


def use_mean_value(rp: RigorousProblem) -> bool:
    return (not rp.polynomial) or rp.spec.tau_unknown


def higher_order_terms(rp: RigorousProblem, A: np.ndarray, rinf: float, rhat: float) -> HigherOrder:
    """Z2 (finite rows, powers >= 2) and Z_inf (tail, powers >= 1) for a given r_inf."""
    nu = float(_up(float(rp.lam.hi) + rinf))
    p = rp.p
    copt = rp.copt
    dp = pow_int(rp.delta, p)                                                   # (m,)
    finite: dict = {}
    tail: dict = {}
    if use_mean_value(rp):
        w = rp.w
        taubox = rp.tau.inflate(w * rhat) if w > 0 else rp.tau
        rho2 = np.zeros((rp.n, rp.m, rp.K))
        # anchor terms q = 1..p-1 (box a_j +- rhat; fixed at j = 0 for an initial value problem)
        if p > 1:
            ev_a = Evaluator(rp.anchors.inflate(rhat), INTERVAL)
            for q in range(1, p):
                S = _mean_value_S(rp, q, ev_a, taubox, 1.0, w)                   # (n, m)
                hq = pow_int(rp.h, q) / float(factorial(q))                      # (m, K)
                term = np.asarray((Interval.point(S)[:, :, None] * hq[None]).hi)
                if rp.spec.variant == "ivp":
                    term[:, 0, :] = 0.0
                rho2 += term
        ev_u = Evaluator(rp.U.inflate(nu * rhat), INTERVAL)
        Sp = _mean_value_S(rp, p, ev_u, taubox, nu, w)
        hp = pow_int(rp.h, p) / float(factorial(p))
        rho2 += np.asarray((Interval.point(Sp)[:, :, None] * hp[None]).hi)
        if A is not None:
            finite[2] = abs_matvec_upper(A, _pad_phase(rp, _up(rho2.reshape(-1))))
        # tail: quadratic part
        quad = np.asarray((copt * (Interval.point(Sp) * dp[None, :])).hi).max(axis=1)
        tail[2] = _up(quad)
        lin_c, lin_e = tail_linear_parts(rp)
        tail[1] = _up(lin_c * nu + lin_e)
        return HigherOrder(finite, tail)

    # polynomial field with fixed tau: exact finite Taylor sums
    d = rp.spec.field.degree
    taus = [pow_int(rp.tau, q) for q in range(p + 1)]
    vec: dict = {}
    for q in range(1, p):
        hq = taus[q] * pow_int(rp.h, q) / float(factorial(q))
        for delta in range(0, q * (d - 1)):
            coef = np.zeros((rp.n, rp.m, rp.K))
            for i in range(rp.n):
                t = rp.tensor_norm(q, i, 2 + delta, rp._ev_anchor)
                t = np.broadcast_to(t, (rp.m,))
                coef[i] = np.asarray((Interval.point(t)[:, None] * hq / float(factorial(1 + delta))).hi)
            if rp.spec.variant == "ivp":
                coef[:, 0, :] = 0.0
            vec[2 + delta] = vec.get(2 + delta, 0.0) + coef
    hp = taus[p] * pow_int(rp.h, p) / float(factorial(p))
    nu_iv = Interval.point(nu)
    for delta in range(0, p * (d - 1)):
        coef = np.zeros((rp.n, rp.m, rp.K))
        for i in range(rp.n):
            t = np.broadcast_to(rp.tensor_norm(p, i, 2 + delta, rp._ev_U), (rp.m,))
            c = Interval.point(t)[:, None] * hp / float(factorial(1 + delta)) * pow_int(nu_iv, 2 + delta)
            coef[i] = np.asarray(c.hi)
        vec[2 + delta] = vec.get(2 + delta, 0.0) + coef
    for power, coef in vec.items():
        if A is None:
            break
        finite[power] = abs_matvec_upper(A, _pad_phase(rp, _up(np.asarray(coef).reshape(-1))))
    for delta in range(0, p * (d - 1) + 1):
        vals = np.zeros(rp.n)
        for i in range(rp.n):
            t = np.broadcast_to(rp.tensor_norm(p, i, 1 + delta, rp._ev_U), (rp.m,))
            c = copt * taus[p] * (dp * Interval.point(t)) / float(factorial(delta))
            c = c * pow_int(nu_iv, 1 + delta)
            vals[i] = float(np.max(c.hi))
        tail[1 + delta] = _up(vals)
    return HigherOrder(finite, tail)


def tail_linear_parts(rp: RigorousProblem):
    """(c, e) with the linear tail coefficient c * (Lambda_k + r_inf) + e, per component."""
    p = rp.p
    dp = pow_int(rp.delta, p)
    c = np.zeros(rp.n)
    e = np.zeros(rp.n)
    tp = pow_int(Interval.point(rp.tau.mag()), p)
    for i in range(rp.n):
        d1 = rp.curve_norm(p, i, 1)
        c[i] = float(np.max((rp.copt * tp * dp * Interval.point(d1)).hi))
        if rp.w > 0:
            d0 = rp.curve_norm(p, i, 0)
            tq = pow_int(Interval.point(rp.tau.mag()), p - 1) * float(p * rp.w)
            e[i] = float(np.max((rp.copt * tq * dp * Interval.point(d0)).hi))
    return _up(c), _up(e)


def bound_Z2(rp: RigorousProblem, A: np.ndarray, rinf: float, rhat: float) -> dict:
    """Finite-part nonlinear coefficients (power -> vector) for a given r_inf."""
    return higher_order_terms(rp, A, rinf, rhat).finite


def bound_Zinf(rp: RigorousProblem, rinf: float, rhat: float) -> dict:
    """Tail bound coefficients (power -> per-component vector) for a given r_inf."""
    return higher_order_terms(rp, None, rinf, rhat).tail


# --------------------------------------------------------------------------
# radii polynomials, r_inf and r
# --------------------------------------------------------------------------

@dataclass
class LinearParts:
    Y: np.ndarray          # finite rows
    z0: np.ndarray
    z1: np.ndarray         # coefficient of r_inf * r
    Yinf: np.ndarray       # per component
    c_inf: np.ndarray      # tail linear: c (Lambda + r_inf) + e
    e_inf: np.ndarray
    lam: float


@dataclass
class RadiiPolynomials:
    Y: np.ndarray
    finite: dict           # power -> vector (power 1 includes z0 + z1 r_inf)
    Yinf: np.ndarray
    tail: dict             # power -> vector
    rinf: float

    def evaluate(self, r: float):
        """Upper bounds of the finite and tail radii polynomials at r."""
        ri = Interval.point(r)
        pf = Interval.point(self.Y) - ri
        for power, c in self.finite.items():
            pf = pf + Interval.point(c) * pow_int(ri, power)
        pt = Interval.point(self.Yinf) - ri * self.rinf
        for power, c in self.tail.items():
            pt = pt + Interval.point(c) * pow_int(ri, power)
        return np.asarray(pf.hi), np.asarray(pt.hi)

    def holds(self, r: float) -> bool:
        pf, pt = self.evaluate(r)
        return bool(np.all(pf < 0) and np.all(pt < 0))

    def worst(self, r: float):
        pf, pt = self.evaluate(r)
        i = int(np.argmax(pf))
        j = int(np.argmax(pt))
        if pf[i] >= pt[j]:
            return ("finite", i, float(pf[i]))
        return ("tail", j, float(pt[j]))


@dataclass
class RinfChoice:
    feasible: bool
    rinf: float = float("nan")
    lo: float = float("nan")
    hi: float = float("nan")
    reason: str = ""


def choose_rinf(lin: LinearParts) -> RinfChoice:
    """Window of r_inf in which both order-one conditions can hold; returns its geometric midpoint.

    Tail: c (Lambda + r_inf) + e < r_inf needs c < 1 and r_inf > (c Lambda + e)/(1 - c).
    Finite: z0 + z1 r_inf < 1 needs z0 < 1 and r_inf < (1 - z0)/z1.
    """
    c, e = np.asarray(lin.c_inf), np.asarray(lin.e_inf)
    if np.any(c >= 1):
        return RinfChoice(False, reason=f"tail order-one coefficient {float(c.max()):.3g} >= 1")
    if np.any(lin.z0 >= 1):
        return RinfChoice(False, reason=f"Z0 row sum {float(lin.z0.max()):.3g} >= 1")
    lo = float(np.max((c * lin.lam + e) / (1 - c))) if len(c) else 0.0
    pos = lin.z1 > 0
    with np.errstate(over="ignore", divide="ignore"):
        hi = float(np.min((1 - lin.z0[pos]) / lin.z1[pos])) if np.any(pos) else np.inf
    if not lo < hi:
        return RinfChoice(False, lo=lo, hi=hi, reason=f"empty r_inf window ({lo:.3g}, {hi:.3g})")
    if not np.isfinite(hi):
        hi = max(1.0, 4 * lo) * 1e6
    lo_eff = lo if lo > 0 else hi * 1e-6
    return RinfChoice(True, math.sqrt(lo_eff * hi), lo, hi)


def rinf_candidates(ch: RinfChoice, count: int = 25) -> list[float]:
    """The geometric midpoint first, then log-spaced points of the window ordered by
    distance from it."""
    if not ch.feasible:
        return []
    lo = ch.lo if ch.lo > 0 else ch.hi * 1e-6
    a, b = math.log(lo), math.log(ch.hi)
    fr = np.linspace(0.0, 1.0, count + 2)[1:-1]
    fr = sorted(fr, key=lambda f: (abs(f - 0.5), f))
    return [math.sqrt(lo * ch.hi)] + [math.exp(a + f * (b - a)) for f in fr if abs(f - 0.5) > 1e-12]


@dataclass
class FinishResult:
    success: bool
    r: float = float("nan")
    worst: tuple | None = None
    message: str = ""


def finish(polys: RadiiPolynomials, rhat: float, bisect_steps: int = 40) -> FinishResult:
    """Smallest r on a ratio-2 grid from just above max Y up to rhat (then bisected)
    at which every radii polynomial is negative."""
    ymax = max(float(np.max(polys.Y, initial=0.0)), float(np.max(polys.Yinf, initial=0.0)) / polys.rinf)
    r = max(1.01 * ymax, 1e-300)
    prev = None
    best_worst = None
    while r <= rhat:
        if polys.holds(r):
            lo = prev if prev is not None else r / 2
            hi = r
            for _ in range(bisect_steps):
                midr = lo * math.sqrt(hi / lo) if lo > 0 else hi / 2
                if polys.holds(midr):
                    hi = midr
                else:
                    lo = midr
                if hi / lo < 1 + 1e-3:
                    break
            return FinishResult(True, hi)
        w = polys.worst(r)
        if best_worst is None or w[2] < best_worst[2]:
            best_worst = w
        prev = r
        r *= 2.0
    if r / 2 < rhat and polys.holds(rhat):
        return FinishResult(True, rhat)
    if best_worst is None:
        best_worst = polys.worst(rhat)
    return FinishResult(False, worst=best_worst,
                        message=f"no r <= {rhat:g} works; closest: {best_worst[0]} row {best_worst[1]} "
                                f"value {best_worst[2]:.3e}")


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

@dataclass
class Validation:
    spec: ProblemSpec
    u: Unknowns
    success: bool
    r: float = float("nan")
    rinf: float = float("nan")
    tau_enclosure: Interval | None = None
    lin: LinearParts | None = None
    polys: RadiiPolynomials | None = None
    message: str = ""
    timings: dict = field(default_factory=dict)
    A: np.ndarray | None = None
    J_digest: str = ""
    lam: float = float("nan")

    @property
    def tau_bar(self) -> float:
        return float(self.u.tau)


def _digest_sparse(M) -> str:
    M = sp.csr_matrix(M)
    h = hashlib.sha256()
    for arr in (M.indptr, M.indices, M.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def assemble(spec: ProblemSpec, u: Unknowns, fam: BootstrapFamily | None = None, A: np.ndarray | None = None):
    """Rigorous problem data, residual, Jacobian, A and the linear bound parts."""
    t = {}
    t0 = time.perf_counter()
    rp = RigorousProblem(spec, u, fam)
    G = rp.residual()
    t["residual"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    Jm, Jr = rp.jacobian()
    t["jacobian"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if A is None:
        A = numerical_inverse(Jm)
    t["inverse"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    Y = bound_Y(A, G)
    Yinf = bound_Yinf(rp)
    z0 = bound_Z0(A, Jm, Jr)
    z1 = bound_Z1(rp, A)
    c_inf, e_inf = tail_linear_parts(rp)
    t["linear_bounds"] = time.perf_counter() - t0
    lin = LinearParts(Y, z0, z1, Yinf, c_inf, e_inf, float(rp.lam.hi))
    return rp, A, Jm, lin, t


def radii_polynomials(rp: RigorousProblem, A: np.ndarray, lin: LinearParts, rinf: float, rhat: float) -> RadiiPolynomials:
    ho = higher_order_terms(rp, A, rinf, rhat)
    finite = dict(ho.finite)
    finite[1] = _up(lin.z0 + _up(lin.z1 * rinf))
    tail = dict(ho.tail)
    if 1 not in tail:
        tail[1] = _up(lin.c_inf * _up(lin.lam + rinf) + lin.e_inf)
    return RadiiPolynomials(lin.Y, finite, lin.Yinf, tail, rinf)


def validate(spec: ProblemSpec, u: Unknowns, fam: BootstrapFamily | None = None,
             rinf_tries: int = 13) -> Validation:
    """Run the full proof: bounds, r_inf selection and the r search.

    Every r_inf candidate of the admissible window is tried and the smallest
    validated r is kept.
    """
    rp, A, Jm, lin, t = assemble(spec, u, fam)
    res = Validation(spec, u, False, lin=lin, timings=t, A=A, J_digest=_digest_sparse(Jm), lam=float(rp.lam.hi))
    choice = choose_rinf(lin)
    if not choice.feasible:
        res.message = choice.reason
        return res
    t0 = time.perf_counter()
    best = None
    last = None
    rhat = spec.rhat
    for rinf in rinf_candidates(choice, count=rinf_tries):
        polys = radii_polynomials(rp, A, lin, rinf, rhat)
        fin = finish(polys, rhat)
        last = (rinf, polys, fin)
        if fin.success and (best is None or fin.r < best[2].r):
            best = last
    if best is not None:
        last = best
    t["finish"] = time.perf_counter() - t0
    rinf, polys, fin = last
    res.rinf, res.polys = rinf, polys
    if fin.success:
        res.success = True
        res.r = fin.r
        res.tau_enclosure = tau_enclosure(spec, u, fin.r)
        res.message = "proved"
    else:
        res.message = fin.message
    return res


def tau_enclosure(spec: ProblemSpec, u: Unknowns, r: float) -> Interval:
    if spec.tau_unknown:
        return Interval.point(float(u.tau)).inflate(_up(spec.tau_weight * r))
    return spec.tau.interval()


# --------------------------------------------------------------------------
# certificates
# --------------------------------------------------------------------------

def _pack_floats(a: np.ndarray) -> str:
    raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return base64.b64encode(zlib.compress(raw, 6)).decode("ascii")


def _unpack_floats(text: str, shape) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(text))
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def make_certificate(v: Validation) -> dict:
    """Machine-checkable record of a validation (successful or not)."""
    spec = v.spec
    cfg = spec.to_config()
    cert = {
        "version": CERT_VERSION,
        "kind": "radii-polynomial proof",
        "toolchain": {"radiipoly": __version__, "numpy": np.__version__, "scipy": _scipy_version()},
        "config": cfg,
        "config_digest": spec.digest(),
        "n": spec.n, "p": spec.p, "k": spec.k, "m": spec.m,
        "tau_bar": float(v.u.tau).hex(),
        "coeffs": floats_to_hex(v.u.poly.coeffs.reshape(-1)),
        "r": float(v.r).hex() if v.success else None,
        "rinf": float(v.rinf).hex() if np.isfinite(v.rinf) else None,
        "tau": interval_to_text(v.tau_enclosure) if v.tau_enclosure is not None else None,
        "lebesgue_upper": float(v.lam).hex(),
        "J_digest": v.J_digest,
        "A_recipe": "scipy.linalg.inv of the midpoint of the value-coordinate Jacobian enclosure",
        "bounds": _bound_summary(v),
        "verdict": "proved" if v.success else "failed",
        "message": v.message,
    }
    if v.A is not None and spec.size <= A_STORE_LIMIT:
        cert["A"] = {"encoding": "zlib+base64 little-endian float64", "shape": list(v.A.shape),
                     "data": _pack_floats(v.A)}
    else:
        cert["A"] = None
    return cert


def _bound_summary(v: Validation) -> dict:
    if v.lin is None:
        return {}
    out = {
        "Y_max": float(np.max(v.lin.Y)).hex(),
        "Yinf": floats_to_hex(v.lin.Yinf),
        "Z0_max": float(np.max(v.lin.z0)).hex(),
        "Z1_max": float(np.max(v.lin.z1)).hex(),
    }
    if v.polys is not None:
        out["finite_terms"] = {str(k): float(np.max(c)).hex() for k, c in v.polys.finite.items()}
        out["tail_terms"] = {str(k): floats_to_hex(np.asarray(c)) for k, c in v.polys.tail.items()}
    return out


def _scipy_version() -> str:
    import scipy
    return scipy.__version__


def write_certificate(cert: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cert, fh, indent=1)


def read_certificate(path) -> dict:
    with open(path) as fh:
        cert = json.load(fh)
    if not isinstance(cert, dict) or "version" not in cert:
        raise ValidationError("malformed certificate: missing version")
    return cert


@dataclass
class Verdict:
    accepted: bool
    proved: bool
    reason: str = ""


def certificate_unknowns(cert: dict) -> tuple[ProblemSpec, Unknowns]:
    spec = spec_from_config(cert["config"])
    if spec.digest() != cert["config_digest"]:
        raise ValidationError("config digest mismatch")
    if (spec.n, spec.p, spec.k, spec.m) != (cert["n"], cert["p"], cert["k"], cert["m"]):
        raise ValidationError("dimension fields disagree with the config")
    coeffs = floats_from_hex(cert["coeffs"]).reshape(spec.n, spec.m, spec.k + 1)
    u = Unknowns(cheb.PiecewisePoly(spec.grid(), coeffs), float.fromhex(cert["tau_bar"]))
    return spec, u


def verify_certificate(cert: dict) -> Verdict:
    """Recompute every bound from the stored data and re-check the radii polynomials
    at the stored r and r_inf."""
    try:
        if cert.get("version") != CERT_VERSION:
            return Verdict(False, False, f"unsupported certificate version {cert.get('version')!r}")
        spec, u = certificate_unknowns(cert)
        stored = cert.get("verdict")
        if stored != "proved":
            return Verdict(True, False, "certificate records a failed proof")
        r = float.fromhex(cert["r"])
        rinf = float.fromhex(cert["rinf"])
        A = None
        if cert.get("A"):
            A = _unpack_floats(cert["A"]["data"], tuple(cert["A"]["shape"]))
        rp, A, Jm, lin, _ = assemble(spec, u, A=A)
        if cert.get("A") is None and _digest_sparse(Jm) != cert.get("J_digest"):
            return Verdict(False, False, "Jacobian digest mismatch: A cannot be reproduced")
        if not (r <= spec.rhat) or r <= 0 or rinf <= 0:
            return Verdict(False, False, "stored radii out of range")
        polys = radii_polynomials(rp, A, lin, rinf, spec.rhat)
        if not polys.holds(r):
            kind, idx, val = polys.worst(r)
            return Verdict(False, False, f"radii polynomials not negative at stored r ({kind} row {idx}: {val:.3e})")
        if cert.get("tau"):
            tau_iv = interval_from_text(cert["tau"])
            if not bool(tau_enclosure(spec, u, r).subset_of(tau_iv)):
                return Verdict(False, False, "stored tau enclosure inconsistent")
        return Verdict(True, True, "verified")
    except ValidationError as exc:
        return Verdict(False, False, str(exc))
    except (KeyError, ValueError, TypeError) as exc:
        return Verdict(False, False, f"malformed certificate: {exc}")
