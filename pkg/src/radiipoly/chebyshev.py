"""Piecewise Chebyshev representation on a mesh of [0, 1].

Each segment [t_j, t_{j+1}] carries a polynomial of degree k written in the
Chebyshev basis of the rescaled variable s in [-1, 1].  Node values live on
the Chebyshev points of the second kind, x_l = cos((k - l) pi / k).  Series
operations work on the last axis of float or Interval coefficient arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

import numpy as np

from .interval import PI, Interval, as_interval, cos, log, matmul, sin


# --------------------------------------------------------------------------
# mesh and grid
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    """Breakpoints 0 = t_0 < ... < t_m = 1 (binary64 values, used exactly)."""

    breakpoints: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        if bp.ndim != 1 or len(bp) < 2:
            raise ValueError("need at least two breakpoints")
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)

    @property
    def m(self) -> int:
        return len(self.breakpoints) - 1

    def widths(self) -> Interval:
        """Enclosures of t_{j+1} - t_j."""
        bp = Interval.point(self.breakpoints)
        return bp[1:] - bp[:-1]

    @staticmethod
    def uniform(m: int) -> "Mesh":
        if m < 1:
            raise ValueError("m must be positive")
        return Mesh(np.array([float(Fraction(j, m)) for j in range(m + 1)]))


@lru_cache(maxsize=None)
def _cheb_points_cached(k: int):
    if k == 0:
        return np.zeros(1), np.zeros(1)
    # x_l = cos((k-l) pi/k) = sin((2l-k) pi/(2k)): exact antisymmetry and x = 0 at the centre
    ang = PI * Interval.from_fraction([Fraction(2 * l - k, 2 * k) for l in range(k + 1)])
    x = sin(ang)
    lo, hi = x.lo.copy(), x.hi.copy()
    lo[0] = hi[0] = -1.0
    lo[k] = hi[k] = 1.0
    if k % 2 == 0:
        lo[k // 2] = hi[k // 2] = 0.0
    return lo, hi


def cheb_points(k: int) -> Interval:
    """Enclosures of the Chebyshev points of the second kind on [-1, 1]."""
    lo, hi = _cheb_points_cached(k)
    return Interval(lo.copy(), hi.copy())


def cheb_points_float(k: int) -> np.ndarray:
    return cheb_points(k).mid()


@dataclass(frozen=True)
class RefinedGrid:
    """A mesh together with k+1 second-kind Chebyshev nodes on every segment."""

    mesh: Mesh
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")

    @property
    def m(self) -> int:
        return self.mesh.m

    @property
    def x(self) -> Interval:
        return cheb_points(self.k)

    def node_times(self) -> np.ndarray:
        """Approximate node times t_{j,l}, shape (m, k+1)."""
        bp = self.mesh.breakpoints
        xf = cheb_points_float(self.k)
        return bp[:-1, None] + 0.5 * (xf[None, :] + 1.0) * np.diff(bp)[:, None]

    def offsets(self) -> Interval:
        """Enclosures of t_{j,l} - t_j = (x_l + 1)/2 * (t_{j+1} - t_j), shape (m, k+1)."""
        w = self.mesh.widths()
        return w[:, None] * ((self.x + 1.0) * 0.5)[None, :]


def make_grid(m: int, k: int, breakpoints=None) -> RefinedGrid:
    """Refined Chebyshev grid on a uniform (or explicit) mesh of [0, 1]."""
    if m < 1 or k < 1:
        raise ValueError("m and k must be positive")
    mesh = Mesh.uniform(m) if breakpoints is None else Mesh(breakpoints)
    if mesh.m != m:
        raise ValueError("breakpoint count does not match m")
    return RefinedGrid(mesh, k)


# --------------------------------------------------------------------------
# value <-> coefficient transforms
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _transform_cached(k: int):
    # V[l, n] = T_n(x_l) = cos(n (k - l) pi / k); reduce the multiple of pi mod 2
    frac = [[Fraction((n * (k - l)) % (2 * k), k) for n in range(k + 1)] for l in range(k + 1)]
    V = cos(PI * Interval.from_fraction(frac))
    vlo, vhi = V.lo.copy(), V.hi.copy()
    for l in range(k + 1):
        for n in range(k + 1):
            q = frac[l][n]
            exact = {Fraction(0): 1.0, Fraction(1): -1.0, Fraction(1, 2): 0.0, Fraction(3, 2): 0.0}
            if q in exact:
                vlo[l, n] = vhi[l, n] = exact[q]
    w = np.ones(k + 1)
    w[0] = w[k] = 0.5
    # inverse: c_n = (2/k) w_n sum_l w_l T_n(x_l) v_l ; all scalings are powers of two or exact rationals
    scale = Interval.from_fraction([[Fraction(2, k) * Fraction(w[n]) * Fraction(w[l]) for l in range(k + 1)]
                                    for n in range(k + 1)])
    Vi = scale * Interval(vlo.T.copy(), vhi.T.copy())
    return vlo, vhi, Vi.lo, Vi.hi


def value_matrix(k: int) -> Interval:
    """V with values = V @ coeffs on one segment."""
    vlo, vhi, _, _ = _transform_cached(k)
    return Interval(vlo.copy(), vhi.copy())


def coeff_matrix(k: int) -> Interval:
    """V^{-1} with coeffs = V^{-1} @ values on one segment."""
    _, _, ilo, ihi = _transform_cached(k)
    return Interval(ilo.copy(), ihi.copy())


def values_from_coeffs(c, k: int | None = None):
    """Node values from Chebyshev coefficients along the last axis (float or Interval)."""
    k = (c.shape[-1] - 1) if k is None else k
    if isinstance(c, Interval):
        V = value_matrix(k)
        flat = c.reshape(-1, k + 1)
        return matmul(V, flat.T).T.reshape(*c.shape)
    return np.asarray(c) @ value_matrix(k).mid().T


def coeffs_from_values(v, k: int | None = None):
    k = (v.shape[-1] - 1) if k is None else k
    if isinstance(v, Interval):
        Vi = coeff_matrix(k)
        flat = v.reshape(-1, k + 1)
        return matmul(Vi, flat.T).T.reshape(*v.shape)
    return np.asarray(v) @ coeff_matrix(k).mid().T


# --------------------------------------------------------------------------
# piecewise polynomials
# --------------------------------------------------------------------------

@dataclass
class PiecewisePoly:
    """n components on a refined grid; ``coeffs`` has shape (n, m, k+1)."""

    grid: RefinedGrid
    coeffs: np.ndarray
    _values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 3 or c.shape[1] != self.grid.m or c.shape[2] != self.grid.k + 1:
            raise ValueError(f"coefficient array of shape {c.shape} does not match the grid")
        self.coeffs = c

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = values_from_coeffs(self.coeffs)
        return self._values

    def values_interval(self) -> Interval:
        return values_from_coeffs(Interval.point(self.coeffs))

    @staticmethod
    def from_values(grid: RefinedGrid, values: np.ndarray) -> "PiecewisePoly":
        return PiecewisePoly(grid, coeffs_from_values(np.asarray(values, dtype=np.float64)))

    def segment_range(self) -> Interval:
        """c_0 +- sum_{n>=1} |c_n| per component and segment, shape (n, m)."""
        c = self.coeffs
        r = Interval.point(np.abs(c[..., 1:])).sum(axis=-1).hi
        return Interval.point(c[..., 0]).inflate(r)

    def right_values(self) -> Interval:
        """Exact enclosure of the value at each segment's right end, shape (n, m)."""
        return Interval.point(self.coeffs).sum(axis=-1)

    def left_values(self) -> Interval:
        sgn = np.array([(-1.0) ** i for i in range(self.grid.k + 1)])
        return Interval.point(self.coeffs * sgn).sum(axis=-1)

    def locate(self, t: np.ndarray):
        """Segment index and rescaled coordinate s in [-1, 1] for times t in [0, 1]."""
        bp = self.grid.mesh.breakpoints
        t = np.asarray(t, dtype=np.float64)
        j = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, self.grid.m - 1)
        s = 2.0 * (t - bp[j]) / (bp[j + 1] - bp[j]) - 1.0
        return j, np.clip(s, -1.0, 1.0)

    def __call__(self, t) -> np.ndarray:
        """Float evaluation at times t; returns shape (n, len(t))."""
        j, s = self.locate(np.atleast_1d(t))
        return np.stack([clenshaw(self.coeffs[i, j, :], s) for i in range(self.n)])


# --------------------------------------------------------------------------
# evaluation and series algebra
# --------------------------------------------------------------------------

def clenshaw(c, x):
    """Evaluate sum_n c[..., n] T_n(x) by Clenshaw's recurrence.

    Works in float or Interval arithmetic (Interval if either input is one).
    """
    interval_mode = isinstance(c, Interval) or isinstance(x, Interval)
    if interval_mode:
        c = as_interval(c)
        x = as_interval(x)
    K = c.shape[-1]
    if K == 1:
        return c[..., 0] + 0.0 * x if not interval_mode else c[..., 0] + x * 0.0
    b1 = 0.0 * c[..., 0]
    b2 = 0.0 * c[..., 0]
    for n in range(K - 1, 0, -1):
        b1, b2 = c[..., n] + x * b1 * 2.0 - b2, b1
    return c[..., 0] + x * b1 - b2


@lru_cache(maxsize=None)
def _product_tensor(la: int, lb: int) -> np.ndarray:
    """S[k, i*lb + j] with T_i T_j = sum_k S[k, i, j] T_k."""
    S = np.zeros((la + lb - 1, la * lb))
    for i in range(la):
        for j in range(lb):
            S[i + j, i * lb + j] += 0.5
            S[abs(i - j), i * lb + j] += 0.5
    return S


def cheb_mul(a, b):
    """Product of Chebyshev series along the last axis (broadcast over leading axes)."""
    la, lb = a.shape[-1], b.shape[-1]
    S = _product_tensor(la, lb)
    if isinstance(a, Interval) or isinstance(b, Interval):
        a = as_interval(a)
        b = as_interval(b)
        P = a[..., :, None] * b[..., None, :]
        lead = P.shape[:-2]
        flat = P.reshape(-1, la * lb)
        out = matmul(S, flat.T).T
        return out.reshape(*lead, la + lb - 1)
    a = np.asarray(a)
    b = np.asarray(b)
    P = a[..., :, None] * b[..., None, :]
    return P.reshape(*P.shape[:-2], la * lb) @ S.T


def cheb_derivative(a):
    """d/ds of a Chebyshev series along the last axis (degree drops by one)."""
    K = a.shape[-1]
    if K == 1:
        return a * 0.0
    interval_mode = isinstance(a, Interval)
    out = [None] * (K - 1)
    nxt = a[..., 0] * 0.0
    nxt2 = a[..., 0] * 0.0
    for n in range(K - 1, 0, -1):
        cur = nxt2 + a[..., n] * float(2 * n)
        out[n - 1] = cur
        nxt2, nxt = nxt, cur
    out[0] = out[0] * 0.5
    if interval_mode:
        return Interval.stack(out, axis=-1)
    return np.stack(out, axis=-1)


def cheb_antiderivative(a):
    """Antiderivative vanishing at s = -1, along the last axis (degree grows by one)."""
    K = a.shape[-1]
    interval_mode = isinstance(a, Interval)
    zero = a[..., 0] * 0.0
    get = lambda n: a[..., n] if n < K else zero
    B = [None] * (K + 1)
    B[1] = get(0) - get(2) * 0.5
    for n in range(2, K + 1):
        B[n] = (get(n - 1) - get(n + 1)) / float(2 * n)
    # value at -1 must vanish: B_0 = -sum_{n>=1} (-1)^n B_n
    acc = zero
    for n in range(1, K + 1):
        acc = acc + B[n] if n % 2 == 0 else acc - B[n]
    B[0] = -acc
    if interval_mode:
        return Interval.stack(B, axis=-1)
    return np.stack(B, axis=-1)


def repeated_integral(a, p: int):
    """I_p[f](s) = int_{-1}^s (s - r)^{p-1}/(p-1)! f(r) dr as a Chebyshev series."""
    out = a
    for _ in range(p):
        out = cheb_antiderivative(out)
    return out


def sup_bound(c, mode: str = "coeff_sum", lebesgue: Interval | None = None) -> np.ndarray:
    """Upper bound of sup_{s in [-1,1]} |sum_n c_n T_n(s)| along the last axis.

    ``coeff_sum`` returns sum |c_n|; ``node_max`` returns Lambda_k max_l |values|.
    """
    ci = as_interval(c)
    if mode == "coeff_sum":
        return abs(ci).sum(axis=-1).hi
    if mode == "node_max":
        if lebesgue is None:
            raise ValueError("node_max needs the Lebesgue constant")
        vals = values_from_coeffs(ci)
        return (Interval.point(vals.mag().max(axis=-1)) * lebesgue).hi
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# Lebesgue constant and interpolation constants
# --------------------------------------------------------------------------

def barycentric_weights(k: int) -> np.ndarray:
    """lambda_i = (-1)^i 2^{k-1}/k, halved at both ends (second-kind points)."""
    w = np.array([(-1.0) ** i * 2.0 ** (k - 1) / k for i in range(k + 1)])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def lagrange_abs_sum_float(k: int, x: np.ndarray) -> np.ndarray:
    """sum_i |L_i(x)| in floats via the barycentric formula (for sampling)."""
    xs = cheb_points_float(k)
    lam = barycentric_weights(k)
    x = np.asarray(x, dtype=np.float64)
    d = x[..., None] - xs
    hit = np.any(d == 0, axis=-1)
    d = np.where(d == 0, 1.0, d)
    t = lam / d
    val = np.sum(np.abs(t), axis=-1) / np.abs(np.sum(t, axis=-1))
    return np.where(hit, 1.0, val)


def _abs_sum_upper(k: int, lo: np.ndarray, hi: np.ndarray):
    """Upper bounds of sum_i |L_i| on boxes [lo, hi], plus rigorous lower values at the midpoints.

    L_i has Chebyshev coefficients V^{-1}[:, i].  On a box where no L_i changes
    sign the sum is the polynomial sum_i sign_i L_i, bounded by its mean-value
    form; boxes containing a node fall back to the natural extension.
    """
    Ci = coeff_matrix(k)                       # (coeff n, function i)
    box = Interval(lo, hi)
    mid = 0.5 * (lo + hi)
    Lbox = clenshaw(Ci.T[None, :, :], box[:, None])           # (boxes, i)
    natural = abs(Lbox).sum(axis=-1).hi
    Lmid = clenshaw(Ci.T[None, :, :], Interval.point(mid)[:, None])
    sign = np.where(Lbox.lo >= 0, 1.0, -1.0)
    fixed = np.all((Lbox.lo > 0) | (Lbox.hi < 0), axis=-1)
    P = matmul(sign, Ci.T)                     # (boxes, coeff n)
    dP = cheb_derivative(P)
    Pmid = clenshaw(P, Interval.point(mid))
    mv = (Pmid + clenshaw(dP, box) * (box - mid)).hi
    upper = np.where(fixed, np.minimum(mv, natural), natural)
    lower = abs(Lmid).sum(axis=-1).lo
    return upper, lower


def _log_bound(k: int) -> Interval:
    return 1.0 + (Interval.point(2.0) / PI) * log(Interval.point(float(k + 1)))


@lru_cache(maxsize=None)
def _lebesgue_cached(k: int, tol: float):
    if k == 1:
        return 1.0, 1.0
    if k % 2 == 1:
        ang = PI * Interval.from_fraction([Fraction(2 * l + 1, 4 * k) for l in range(k)])
        s = (cos(ang) / sin(ang)).sum() / float(k)
        return float(s.lo), float(s.hi)
    # even k: branch and bound over [0, 1] (the sum is even in x)
    edges = np.linspace(0.0, 1.0, 8 * k + 1)
    boxes_lo, boxes_hi = edges[:-1], edges[1:]
    best_lo = 1.0
    settled = -np.inf
    upper = np.inf
    for _ in range(200):
        up, low = _abs_sum_upper(k, boxes_lo, boxes_hi)
        best_lo = max(best_lo, float(np.max(low)))
        upper = max(float(np.max(up)), settled)
        if upper - best_lo <= tol or len(boxes_lo) > 200_000:
            break
        # boxes whose bound stays below best_lo + tol/2 are settled
        keep = up > best_lo + 0.5 * tol
        if np.any(~keep):
            settled = max(settled, float(np.max(up[~keep])))
        lo_k, hi_k = boxes_lo[keep], boxes_hi[keep]
        mid = 0.5 * (lo_k + hi_k)
        boxes_lo = np.concatenate([lo_k, mid])
        boxes_hi = np.concatenate([mid, hi_k])
    upper = max(upper, best_lo)
    logb = _log_bound(k)
    return best_lo, min(upper, float(logb.hi))


def lebesgue_constant(k: int, tol: float = 1e-9) -> Interval:
    """Rigorous enclosure of the Lebesgue constant of the k+1 second-kind points.

    Odd k uses the closed cotangent sum; even k takes the better of the
    logarithmic bound 1 + (2/pi) ln(k+1) and an interval branch and bound of
    sum_i |L_i(x)|.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    lo, hi = _lebesgue_cached(k, tol)
    return Interval(lo, hi)


@dataclass(frozen=True)
class InterpConstants:
    k: int
    l: int
    C_k: Interval
    tildeC: Interval
    branch_a: Interval
    branch_b: Interval
    lebesgue: Interval


def interp_error_constant(k: int) -> Interval:
    """C_k = 1/((k+1)! 4^k)."""
    return Interval.from_fraction(Fraction(1, factorial(k + 1) * 4 ** k))


def interp_constants(k: int, l: int) -> InterpConstants:
    """Interpolation error constants for C^{k+1} and C^l functions."""
    if not 1 <= l <= k:
        raise ValueError("need 1 <= l <= k")
    lam = lebesgue_constant(k)
    branch_a = (1.0 + lam) * pow_pi_quarter(l) * Interval.from_fraction(
        Fraction(factorial(k + 1 - l), factorial(k + 1)))
    sb = sum(Fraction(comb(l - 1, 2 * q) * comb(2 * q, q), 4 ** q) for q in range((l - 1) // 2 + 1))
    branch_b = Interval.from_fraction(sb / (factorial(l) * 2 ** l))
    tilde = Interval(np.minimum(branch_a.lo, branch_b.lo), np.minimum(branch_a.hi, branch_b.hi))
    return InterpConstants(k, l, interp_error_constant(k), tilde, branch_a, branch_b, lam)


def pow_pi_quarter(l: int) -> Interval:
    return (PI * 0.25) ** l


def c_opt(k: int, p: int) -> Interval:
    """C_k when p = k + 1, tilde C_{k,p} when p <= k."""
    if p == k + 1:
        return interp_error_constant(k)
    if 1 <= p <= k:
        return interp_constants(k, p).tildeC
    raise ValueError("need p <= k + 1")
