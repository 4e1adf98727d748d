"""Outward-rounded interval arithmetic on numpy arrays.

Every operation is carried out in round-to-nearest binary64 and then widened
to a rigorous enclosure.  Where an error-free transformation (TwoSum, Dekker's
TwoProduct) can certify the exact rounding error, the endpoint is moved by at
most one ulp and only in the direction of the error; otherwise the endpoint is
pushed one ulp outward unconditionally.  No global rounding mode is touched,
so the arithmetic is thread safe.
"""
from __future__ import annotations

import re
from fractions import Fraction
from typing import Iterable

import numpy as np
import scipy.sparse as sp

_INF = np.inf
_U = 2.0 ** -53
_SPLIT = 134217729.0  # 2**27 + 1, Dekker splitting constant
_MAXF = np.finfo(np.float64).max
# Dekker's TwoProduct is exact when neither factor risks overflow in the split
# and the product stays clear of the subnormal range.
_SPLIT_SAFE = 2.0 ** 995
_PROD_SAFE = 2.0 ** -969

# 60 significant digits of pi; enclosed as an exact rational +- 1e-59.
_PI_DIGITS = "3.14159265358979323846264338327950288419716939937510582097494"


class DomainError(ArithmeticError):
    """Raised for operations outside the domain, e.g. division by an interval containing 0."""


# --------------------------------------------------------------------------
# error-free transformations and directed rounding of single floats
# --------------------------------------------------------------------------

def _two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def _split(a):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = al * bl - (((p - ah * bh) - al * bh) - ah * bl)
    return p, e


def _dn(s, e):
    """Largest float <= s + e, given that s + e is the exact value."""
    return np.where(e < 0, np.nextafter(s, -_INF), s)


def _up(s, e):
    return np.where(e > 0, np.nextafter(s, _INF), s)


def _add_dn(a, b):
    with np.errstate(invalid="ignore", over="ignore"):
        s, e = _two_sum(a, b)
        return np.where(np.isfinite(e), _dn(s, e), np.nextafter(s, -_INF))


def _add_up(a, b):
    with np.errstate(invalid="ignore", over="ignore"):
        s, e = _two_sum(a, b)
        return np.where(np.isfinite(e), _up(s, e), np.nextafter(s, _INF))


def _mul_err(a, b):
    """Return (p, e, exact_ok) with p + e == a*b whenever exact_ok holds."""
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        p, e = _two_prod(a, b)
        aa = np.abs(a)
        bb = np.abs(b)
        ok = (aa < _SPLIT_SAFE) & (bb < _SPLIT_SAFE) & ((np.abs(p) >= _PROD_SAFE) | (aa == 0) | (bb == 0))
    return p, e, ok


def _mul_dn(a, b):
    p, e, ok = _mul_err(a, b)
    return np.where(ok, _dn(p, e), np.nextafter(p, -_INF))


def _mul_up(a, b):
    p, e, ok = _mul_err(a, b)
    return np.where(ok, _up(p, e), np.nextafter(p, _INF))


def _div_err(a, b):
    """Quotient q and the sign of (a/b - q)."""
    with np.errstate(invalid="ignore", over="ignore", under="ignore", divide="ignore"):
        q = a / b
        p, e, ok = _mul_err(q, b)
        rem = (a - p) - e
        sgn = np.sign(rem) * np.sign(b)
        ok = (ok & np.isfinite(q) & (np.abs(a) >= _PROD_SAFE * 4)) | (a == 0)
    return q, sgn, ok


def _div_dn(a, b):
    q, sgn, ok = _div_err(a, b)
    return np.where(ok, np.where(sgn < 0, np.nextafter(q, -_INF), q), np.nextafter(q, -_INF))


def _div_up(a, b):
    q, sgn, ok = _div_err(a, b)
    return np.where(ok, np.where(sgn > 0, np.nextafter(q, _INF), q), np.nextafter(q, _INF))


def _f(x):
    return np.asarray(x, dtype=np.float64)


# --------------------------------------------------------------------------
# the interval array type
# --------------------------------------------------------------------------

class Interval:
    """Array of closed intervals [lo, hi] with binary64 endpoints.

    Scalars are 0-d arrays.  Arithmetic broadcasts like numpy.  The
    ``overflow`` flag records that some endpoint left the finite range; a
    flagged value must not be used to conclude a proof.
    """

    __slots__ = ("lo", "hi", "overflow")
    __array_priority__ = 1000

    def __init__(self, lo, hi=None, overflow: bool = False):
        lo = _f(lo)
        hi = lo if hi is None else _f(hi)
        if lo.shape != hi.shape:
            lo, hi = np.broadcast_arrays(lo, hi)
            lo, hi = lo.copy(), hi.copy()
        bad = ~(np.isfinite(lo) & np.isfinite(hi))
        if np.any(bad):
            if np.any(np.isnan(lo) | np.isnan(hi)):
                raise DomainError("NaN endpoint")
            overflow = True
            lo = np.where(np.isfinite(lo), lo, -_MAXF)
            hi = np.where(np.isfinite(hi), hi, _MAXF)
        if np.any(lo > hi):
            raise DomainError("inverted interval (lo > hi)")
        self.lo = lo
        self.hi = hi
        self.overflow = bool(overflow)

    # construction helpers ---------------------------------------------------
    @staticmethod
    def point(x) -> "Interval":
        x = _f(x)
        return Interval(x, x.copy())

    @staticmethod
    def from_fraction(q) -> "Interval":
        """Tightest float enclosure of a rational (or array of rationals)."""
        if isinstance(q, (list, tuple, np.ndarray)):
            arr = np.asarray(q, dtype=object)
            lo = np.empty(arr.shape)
            hi = np.empty(arr.shape)
            for idx, v in np.ndenumerate(arr):
                iv = Interval.from_fraction(v)
                lo[idx] = iv.lo
                hi[idx] = iv.hi
            return Interval(lo, hi)
        q = Fraction(q)
        f = float(q)
        fq = Fraction(f)
        if fq == q:
            return Interval(f, f)
        if fq < q:
            return Interval(f, np.nextafter(f, _INF))
        return Interval(np.nextafter(f, -_INF), f)

    @staticmethod
    def from_decimal(text: str) -> "Interval":
        return Interval.from_fraction(Fraction(text))

    @staticmethod
    def hull_of(*xs: "Interval") -> "Interval":
        lo = xs[0].lo
        hi = xs[0].hi
        for x in xs[1:]:
            lo = np.minimum(lo, x.lo)
            hi = np.maximum(hi, x.hi)
        return Interval(lo, hi, any(x.overflow for x in xs))

    @staticmethod
    def zeros(shape) -> "Interval":
        return Interval(np.zeros(shape), np.zeros(shape))

    @staticmethod
    def stack(items: Iterable["Interval"], axis: int = 0) -> "Interval":
        items = list(items)
        return Interval(np.stack([a.lo for a in items], axis), np.stack([a.hi for a in items], axis),
                        any(a.overflow for a in items))

    @staticmethod
    def concatenate(items: Iterable["Interval"], axis: int = 0) -> "Interval":
        items = list(items)
        return Interval(np.concatenate([a.lo for a in items], axis), np.concatenate([a.hi for a in items], axis),
                        any(a.overflow for a in items))

    # array protocol --------------------------------------------------------
    @property
    def shape(self):
        return self.lo.shape

    @property
    def ndim(self):
        return self.lo.ndim

    def __len__(self):
        return len(self.lo)

    def __getitem__(self, idx) -> "Interval":
        return Interval(self.lo[idx], self.hi[idx], self.overflow)

    def __setitem__(self, idx, val) -> None:
        val = as_interval(val)
        self.lo[idx] = val.lo
        self.hi[idx] = val.hi
        self.overflow = self.overflow or val.overflow

    def copy(self) -> "Interval":
        return Interval(self.lo.copy(), self.hi.copy(), self.overflow)

    def reshape(self, *shape) -> "Interval":
        return Interval(self.lo.reshape(*shape), self.hi.reshape(*shape), self.overflow)

    def transpose(self, *axes) -> "Interval":
        return Interval(self.lo.transpose(*axes), self.hi.transpose(*axes), self.overflow)

    @property
    def T(self) -> "Interval":
        return self.transpose()

    def broadcast_to(self, shape) -> "Interval":
        return Interval(np.broadcast_to(self.lo, shape).copy(), np.broadcast_to(self.hi, shape).copy(), self.overflow)

    def __repr__(self):
        if self.ndim == 0:
            return f"Interval([{self.lo!r}, {self.hi!r}])"
        return f"Interval(shape={self.shape})"

    # queries ----------------------------------------------------------------
    def mid(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            m = 0.5 * self.lo + 0.5 * self.hi
        return np.where(np.isfinite(m), m, 0.0)

    def rad(self) -> np.ndarray:
        """Upper bound of the radius about ``mid()``."""
        m = self.mid()
        return np.maximum(_add_up(self.hi, -m), _add_up(m, -self.lo))

    def midrad(self):
        m = self.mid()
        return m, np.maximum(_add_up(self.hi, -m), _add_up(m, -self.lo))

    def width(self) -> np.ndarray:
        return _add_up(self.hi, -self.lo)

    def mag(self) -> np.ndarray:
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def mig(self) -> np.ndarray:
        return np.where((self.lo <= 0) & (self.hi >= 0), 0.0, np.minimum(np.abs(self.lo), np.abs(self.hi)))

    def contains(self, x) -> np.ndarray:
        if isinstance(x, Interval):
            return (self.lo <= x.lo) & (x.hi <= self.hi)
        if isinstance(x, Fraction):
            return (Fraction(float(self.lo)) <= x) & (x <= Fraction(float(self.hi)))
        x = _f(x)
        return (self.lo <= x) & (x <= self.hi)

    def intersects(self, other: "Interval") -> np.ndarray:
        return (self.lo <= other.hi) & (other.lo <= self.hi)

    def subset_of(self, other: "Interval") -> np.ndarray:
        return (other.lo <= self.lo) & (self.hi <= other.hi)

    def contains_zero(self) -> np.ndarray:
        return (self.lo <= 0) & (self.hi >= 0)

    def hull(self, other) -> "Interval":
        other = as_interval(other)
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi), self.overflow or other.overflow)

    def intersect(self, other) -> "Interval":
        other = as_interval(other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            raise DomainError("empty intersection")
        return Interval(lo, hi, self.overflow or other.overflow)

    def inflate(self, r) -> "Interval":
        """Interval widened by ``r >= 0`` on each side."""
        r = _f(r)
        return Interval(_add_dn(self.lo, -r), _add_up(self.hi, r), self.overflow)

    # arithmetic ---------------------------------------------------------------
    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo, self.overflow)

    def __pos__(self) -> "Interval":
        return self

    def __add__(self, other) -> "Interval":
        other = as_interval(other)
        return Interval(_add_dn(self.lo, other.lo), _add_up(self.hi, other.hi), self.overflow or other.overflow)

    __radd__ = __add__

    def __sub__(self, other) -> "Interval":
        other = as_interval(other)
        return Interval(_add_dn(self.lo, -other.hi), _add_up(self.hi, -other.lo), self.overflow or other.overflow)

    def __rsub__(self, other) -> "Interval":
        return as_interval(other) - self

    def __mul__(self, other) -> "Interval":
        other = as_interval(other)
        a, b, c, d = self.lo, self.hi, other.lo, other.hi
        lo = np.minimum(np.minimum(_mul_dn(a, c), _mul_dn(a, d)), np.minimum(_mul_dn(b, c), _mul_dn(b, d)))
        hi = np.maximum(np.maximum(_mul_up(a, c), _mul_up(a, d)), np.maximum(_mul_up(b, c), _mul_up(b, d)))
        return Interval(lo, hi, self.overflow or other.overflow)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Interval":
        other = as_interval(other)
        if np.any(other.contains_zero()):
            raise DomainError("division by an interval containing zero")
        a, b, c, d = self.lo, self.hi, other.lo, other.hi
        lo = np.minimum(np.minimum(_div_dn(a, c), _div_dn(a, d)), np.minimum(_div_dn(b, c), _div_dn(b, d)))
        hi = np.maximum(np.maximum(_div_up(a, c), _div_up(a, d)), np.maximum(_div_up(b, c), _div_up(b, d)))
        return Interval(lo, hi, self.overflow or other.overflow)

    def __rtruediv__(self, other) -> "Interval":
        return as_interval(other) / self

    def sqr(self) -> "Interval":
        lo2 = _mul_dn(self.mig(), self.mig())
        hi2 = _mul_up(self.mag(), self.mag())
        return Interval(lo2, hi2, self.overflow)

    def __pow__(self, n: int) -> "Interval":
        return pow_int(self, n)

    def __abs__(self) -> "Interval":
        return Interval(self.mig(), self.mag(), self.overflow)

    def abs(self) -> "Interval":
        return abs(self)

    def sum(self, axis=None) -> "Interval":
        return rigorous_sum(self, axis)

    def sin(self) -> "Interval":
        return sin(self)

    def cos(self) -> "Interval":
        return cos(self)


def as_interval(x) -> Interval:
    """Coerce floats, ints, Fractions and arrays of floats to an Interval.

    Floats are taken as exact binary64 values; Fractions are enclosed.
    """
    if isinstance(x, Interval):
        return x
    if isinstance(x, Fraction):
        return Interval.from_fraction(x)
    if isinstance(x, (int, np.integer)) and abs(int(x)) > 2 ** 53:
        return Interval.from_fraction(Fraction(int(x)))
    return Interval.point(x)


# --------------------------------------------------------------------------
# elementary functions
# --------------------------------------------------------------------------

def pow_int(x: Interval, n: int) -> Interval:
    """Exact-hull enclosure of x**n for an integer n >= 0."""
    if n < 0:
        raise ValueError("pow_int needs a nonnegative exponent")
    if n == 0:
        return Interval(np.ones(x.shape), np.ones(x.shape), x.overflow)
    if n == 1:
        return x
    if n % 2 == 0:
        lo = _point_pow(x.mig(), n, down=True)
        hi = _point_pow(x.mag(), n, down=False)
        return Interval(lo, hi, x.overflow)
    return Interval(_point_pow(x.lo, n, down=True), _point_pow(x.hi, n, down=False), x.overflow)


def _point_pow(a: np.ndarray, n: int, down: bool) -> np.ndarray:
    p = Interval.point(a)
    acc = Interval(np.ones(p.shape))
    base = p
    while n:
        if n & 1:
            acc = acc * base
        n >>= 1
        if n:
            base = base * base
    return acc.lo if down else acc.hi


def _pi_fraction() -> Fraction:
    return Fraction(_PI_DIGITS)


def _enclose_rational_band(q: Fraction, eps: Fraction) -> Interval:
    lo = Interval.from_fraction(q - eps).lo
    hi = Interval.from_fraction(q + eps).hi
    return Interval(lo, hi)


_PI_EPS = Fraction(1, 10 ** 59)
PI = _enclose_rational_band(_pi_fraction(), _PI_EPS)

# Cody-Waite split of pi/2: C1 and C2 carry at most 31 significant bits each,
# so k*C1 and k*C2 are exact for |k| < 2**22.
_HALF_PI = _pi_fraction() / 2
_C1 = Fraction(int(_HALF_PI * 2 ** 30), 2 ** 30)
_C2 = Fraction(int((_HALF_PI - _C1) * 2 ** 60), 2 ** 60)
_C3 = _enclose_rational_band(_HALF_PI - _C1 - _C2, _PI_EPS)
_C1F = float(_C1)
_C2F = float(_C2)
_TWO_OVER_PI = float(2 / _pi_fraction())
_REDUCE_LIMIT = 2.0 ** 20

def _fact(n: int) -> int:
    r = 1
    for i in range(2, n + 1):
        r *= i
    return r


_NTERMS = 11
_SIN_C = [Interval.from_fraction(Fraction((-1) ** j, _fact(2 * j + 1))) for j in range(_NTERMS)]
_COS_C = [Interval.from_fraction(Fraction((-1) ** j, _fact(2 * j))) for j in range(_NTERMS)]
_SIN_REM = Interval.from_fraction(Fraction(1, _fact(2 * _NTERMS + 1))).hi
_COS_REM = Interval.from_fraction(Fraction(1, _fact(2 * _NTERMS))).hi


def _horner(coefs, y: Interval) -> Interval:
    acc = coefs[-1]
    for c in reversed(coefs[:-1]):
        acc = c + y * acc
    return acc


def _sin_cos_reduced(r: Interval):
    """Enclosures of sin r and cos r for |r| <= 0.8 via Taylor with remainder."""
    y = r.sqr()
    s = r * _horner(_SIN_C, y)
    c = _horner(_COS_C, y)
    m = r.mag()
    srem = _mul_up(_point_pow(m, 2 * _NTERMS + 1, down=False), _SIN_REM)
    crem = _mul_up(_point_pow(m, 2 * _NTERMS, down=False), _COS_REM)
    return s.inflate(srem), c.inflate(crem)


def _point_sincos(x: np.ndarray):
    """Rigorous enclosures of sin and cos at float points x."""
    x = _f(x)
    big = ~(np.abs(x) < _REDUCE_LIMIT)
    xs = np.where(big, 0.0, x)
    k = np.rint(xs * _TWO_OVER_PI)
    r = Interval.point(xs) - Interval.point(k * _C1F)
    r = r - Interval.point(k * _C2F)
    r = r - Interval.point(k) * _C3
    s, c = _sin_cos_reduced(r)
    q = np.mod(k, 4).astype(int)
    sin_lo = np.choose(q, [s.lo, c.lo, -s.hi, -c.hi])
    sin_hi = np.choose(q, [s.hi, c.hi, -s.lo, -c.lo])
    cos_lo = np.choose(q, [c.lo, -s.hi, -c.hi, s.lo])
    cos_hi = np.choose(q, [c.hi, -s.lo, -c.lo, s.hi])
    one = np.ones(x.shape)
    sin_lo = np.where(big, -one, sin_lo)
    sin_hi = np.where(big, one, sin_hi)
    cos_lo = np.where(big, -one, cos_lo)
    cos_hi = np.where(big, one, cos_hi)
    return Interval(sin_lo, sin_hi), Interval(cos_lo, cos_hi)


def _hits(phase: Fraction, x: Interval) -> np.ndarray:
    """Whether x may contain a point phase*pi + 2*k*pi for an integer k (conservative)."""
    two_pi = PI * 2
    ta = (Interval.point(x.lo) - PI * Interval.from_fraction(phase)) / two_pi
    tb = (Interval.point(x.hi) - PI * Interval.from_fraction(phase)) / two_pi
    return np.ceil(ta.lo) <= tb.hi


def sin(x) -> Interval:
    """Enclosure of sin over an interval, clipped to [-1, 1]."""
    x = as_interval(x)
    slo, _ = _point_sincos(x.lo)
    shi, _ = _point_sincos(x.hi)
    lo = np.minimum(slo.lo, shi.lo)
    hi = np.maximum(slo.hi, shi.hi)
    wide = ~(x.width() < 6.0)
    hi = np.where(wide | _hits(Fraction(1, 2), x), 1.0, hi)
    lo = np.where(wide | _hits(Fraction(-1, 2), x), -1.0, lo)
    return Interval(np.clip(lo, -1.0, 1.0), np.clip(hi, -1.0, 1.0), x.overflow)


def cos(x) -> Interval:
    """Enclosure of cos over an interval, clipped to [-1, 1]."""
    x = as_interval(x)
    _, clo = _point_sincos(x.lo)
    _, chi = _point_sincos(x.hi)
    lo = np.minimum(clo.lo, chi.lo)
    hi = np.maximum(clo.hi, chi.hi)
    wide = ~(x.width() < 6.0)
    hi = np.where(wide | _hits(Fraction(0), x), 1.0, hi)
    lo = np.where(wide | _hits(Fraction(1), x), -1.0, lo)
    return Interval(np.clip(lo, -1.0, 1.0), np.clip(hi, -1.0, 1.0), x.overflow)


def log(x) -> Interval:
    """Enclosure of the natural logarithm for positive arguments.

    ln y = 2 atanh(z), z = (y-1)/(y+1), summed as a series with a geometric
    tail bound; the argument is first scaled into [1/sqrt2, sqrt2] by powers
    of two, with ln 2 enclosed the same way.
    """
    x = as_interval(x)
    if np.any(x.lo <= 0):
        raise DomainError("log of a nonpositive interval")
    lo = _log_point(x.lo).lo
    hi = _log_point(x.hi).hi
    return Interval(lo, hi, x.overflow)


def _atanh_series(z: Interval, nterms: int = 40) -> Interval:
    z2 = z.sqr()
    acc = Interval.zeros(z.shape)
    p = z
    for j in range(nterms):
        acc = acc + p / float(2 * j + 1)
        p = p * z2
    # tail: sum_{j>=n} |z|^{2j+1}/(2j+1) <= |z|^{2n+1} / ((2n+1)(1-z^2))
    m = z.mag()
    tail = Interval.point(_point_pow(m, 2 * nterms + 1, down=False)) / (
        (1.0 - Interval.point(_mul_up(m, m))) * float(2 * nterms + 1))
    return acc.inflate(tail.hi)


_LN2 = _atanh_series(Interval.from_fraction(Fraction(1, 3))) * 2.0


def _log_point(y: np.ndarray) -> Interval:
    y = _f(y)
    mant, ex = np.frexp(y)  # y = mant * 2**ex, mant in [0.5, 1)
    adj = mant < 0.7071067811865476
    mant = np.where(adj, mant * 2.0, mant)
    ex = np.where(adj, ex - 1, ex)
    m = Interval.point(mant)
    z = (m - 1.0) / (m + 1.0)
    return _atanh_series(z) * 2.0 + _LN2 * Interval.point(ex.astype(np.float64))


# --------------------------------------------------------------------------
# rigorous sums and linear algebra (midpoint-radius)
# --------------------------------------------------------------------------

def gamma(k: int) -> float:
    """Upper bound of gamma_k = k u / (1 - k u) for round-to-nearest."""
    ku = k * _U
    if ku >= 0.01:
        raise ValueError("dimension too large for the gamma bound")
    return 1.02 * ku


def _eta(k: int) -> float:
    return (k + 1) * 2.0 ** -1073


def _inflate_nonneg(s: np.ndarray, k: int) -> np.ndarray:
    """Upper bound of an exact nonnegative sum of k terms given its float value s."""
    g = gamma(k + 2)
    with np.errstate(over="ignore"):
        out = np.nextafter(s * (1.0 + 2.0 * g) + _eta(k), _INF)
    return out


def rigorous_sum(x: Interval, axis=None) -> Interval:
    """Enclosure of the sum of interval entries along an axis."""
    m, r = x.midrad()
    if axis is None:
        m = m.ravel()
        r = r.ravel()
        axis = 0
    k = m.shape[axis] if m.ndim else 1
    c = np.sum(m, axis=axis)
    err = _inflate_nonneg(np.sum(np.abs(m), axis=axis) * gamma(max(k, 1)) + np.sum(r, axis=axis), k)
    # a sum of exact zeros is exact; the underflow pad is not needed
    err = np.where(np.all((m == 0) & (r == 0), axis=axis), 0.0, err)
    return Interval(_add_dn(c, -err), _add_up(c, err), x.overflow)


def _abs_op(M):
    return abs(M)


def _support_hits(M, vm, vr):
    """Number of index pairs where a nonzero of M meets a nonzero of v (integer valued)."""
    nzv = ((vm != 0) | (vr != 0)).astype(np.float64)
    if isinstance(M, Interval):
        nzM = ((M.lo != 0) | (M.hi != 0)).astype(np.float64)
    elif sp.issparse(M):
        nzM = (abs(M) > 0).astype(np.float64)
    else:
        nzM = (np.asarray(M) != 0).astype(np.float64)
    return np.asarray(nzM @ nzv)


def matmul(M, v) -> Interval:
    """Enclosure of M @ v where M is a float matrix (dense or scipy sparse) or an Interval.

    ``v`` may be a float array or an Interval (vector or matrix).
    """
    vi = as_interval(v)
    vm, vr = vi.midrad()
    if isinstance(M, Interval):
        Mm, Mr = M.midrad()
    else:
        Mm, Mr = M, None
    k = Mm.shape[-1]
    g = gamma(k + 2)
    c = np.asarray(Mm @ vm)
    absM = _abs_op(Mm)
    avm = np.abs(vm)
    w = np.nextafter((avm * g + vr) * (1.0 + 4 * _U), _INF)
    s = np.asarray(absM @ w)
    if Mr is not None:
        s = s + np.asarray(Mr @ np.nextafter((avm + vr) * (1.0 + 2 * _U), _INF))
    err = _inflate_nonneg(s, k + 1)
    # entries where no nonzero of M meets a nonzero of v are exact zeros (no underflow pad)
    err = np.where(_support_hits(M, vm, vr) == 0, 0.0, err)
    return Interval(_add_dn(c, -err), _add_up(c, err), vi.overflow or (isinstance(M, Interval) and M.overflow))


def abs_matvec_upper(M, v: np.ndarray) -> np.ndarray:
    """Upper bound of |M| @ v for a float matrix M and a nonnegative float vector v."""
    v = _f(v)
    k = M.shape[-1]
    s = np.asarray(_abs_op(M) @ v)
    return np.where(_support_hits(M, v, np.zeros_like(v)) == 0, 0.0, _inflate_nonneg(s, k))


def sup_norm_rows(M: Interval) -> np.ndarray:
    """Upper bounds of the row sums of |M|."""
    return _inflate_nonneg(np.sum(M.mag(), axis=-1), M.shape[-1])


# --------------------------------------------------------------------------
# hex-float text form
# --------------------------------------------------------------------------

_HEX_RE = re.compile(r"^-?0x[01](\.[0-9a-f]+)?p[+-][0-9]+$")


def float_to_hex(x: float) -> str:
    """Normalized hex form of a float, e.g. 1.0 -> '0x1p+0'."""
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("non-finite float has no certificate encoding")
    h = x.hex()
    mant, ex = h.split("p")
    if "." in mant:
        mant = mant.rstrip("0").rstrip(".")
    return f"{mant}p{ex}"


def hex_to_float(text: str) -> float:
    text = text.strip()
    if not _HEX_RE.match(text):
        raise ValueError(f"malformed hex float: {text!r}")
    return float.fromhex(text)


def interval_to_text(x: Interval) -> str:
    """'lo,hi' in hex for a scalar interval."""
    return f"{float_to_hex(float(x.lo))},{float_to_hex(float(x.hi))}"


def interval_from_text(text: str) -> Interval:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"malformed interval text: {text!r}")
    lo, hi = hex_to_float(parts[0]), hex_to_float(parts[1])
    if lo > hi:
        raise ValueError(f"inverted interval: {text!r}")
    return Interval(lo, hi)


def floats_to_hex(a: np.ndarray) -> list[str]:
    return [float_to_hex(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def floats_from_hex(items: list[str]) -> np.ndarray:
    return np.array([hex_to_float(s) for s in items], dtype=np.float64)
