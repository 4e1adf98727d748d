"""Vector fields: a small DSL, symbolic calculus and rigorous evaluation.

Expressions are kept in a canonical form: a polynomial with exact rational
coefficients over *atoms*, where an atom is a state variable ``x_i`` or
``sin``/``cos`` of another canonical expression.  Canonical form makes
equality structural, so printing and re-parsing is the identity and
derivative tensors can be cached by multiset of partials.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from itertools import combinations_with_replacement
from typing import Callable, Mapping

import numpy as np

from . import chebyshev as cheb
from .interval import Interval, as_interval, cos as iv_cos, sin as iv_sin


class ParseError(ValueError):
    """Malformed DSL text; ``pos`` is the offending character offset."""

    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


class UnboundSymbol(ValueError):
    pass


class NotPolynomial(TypeError):
    pass


# --------------------------------------------------------------------------
# canonical expressions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    kind: str                   # "x", "sin" or "cos"
    index: int = 0              # variable index (0-based) for kind "x"
    arg: "Expr | None" = None   # argument for sin/cos

    @cached_property
    def key(self):
        if self.kind == "x":
            return (0, self.index)
        return (1 if self.kind == "sin" else 2, self.arg.key)

    def __lt__(self, other: "Atom"):
        return self.key < other.key


Monomial = tuple  # tuple of (Atom, power) sorted by atom


class Expr:
    """Polynomial over atoms with Fraction coefficients (immutable)."""

    __slots__ = ("terms", "_key", "_hash")

    def __init__(self, terms: Mapping[Monomial, Fraction] | None = None):
        items = {} if terms is None else {m: Fraction(c) for m, c in terms.items() if c != 0}
        self.terms = dict(sorted(items.items(), key=lambda mc: _mono_key(mc[0])))
        self._key = None
        self._hash = None

    # construction ----------------------------------------------------------
    @staticmethod
    def const(c) -> "Expr":
        return Expr({(): Fraction(c)})

    @staticmethod
    def var(i: int) -> "Expr":
        return Expr({((Atom("x", i), 1),): Fraction(1)})

    @staticmethod
    def atom(a: Atom) -> "Expr":
        return Expr({((a, 1),): Fraction(1)})

    # structure -------------------------------------------------------------
    @property
    def key(self):
        if self._key is None:
            self._key = tuple((_mono_key(m), c) for m, c in self.terms.items())
        return self._key

    def __eq__(self, other):
        return isinstance(other, Expr) and self.key == other.key

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.key)
        return self._hash

    def is_const(self) -> bool:
        return all(m == () for m in self.terms)

    def const_value(self) -> Fraction:
        if not self.is_const():
            raise ValueError("expression is not constant")
        return self.terms.get((), Fraction(0))

    def atoms(self) -> set:
        out = set()
        for m in self.terms:
            for a, _ in m:
                out.add(a)
                if a.arg is not None:
                    out |= a.arg.atoms()
        return out

    def is_polynomial(self) -> bool:
        return all(a.kind == "x" for a in self.atoms())

    def degree(self) -> int:
        if not self.is_polynomial():
            raise NotPolynomial("expression contains sin/cos")
        return max((sum(p for _, p in m) for m in self.terms), default=0)

    def max_var(self) -> int:
        return max((a.index for a in self.atoms() if a.kind == "x"), default=-1)

    # algebra ---------------------------------------------------------------
    def __add__(self, other) -> "Expr":
        other = _lift(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return Expr(out)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr({m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Expr":
        return self + (-_lift(other))

    def __rsub__(self, other) -> "Expr":
        return _lift(other) - self

    def __mul__(self, other) -> "Expr":
        other = _lift(other)
        out: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                out[m] = out.get(m, 0) + c1 * c2
        return Expr(out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Expr":
        if not isinstance(n, int) or n < 0:
            raise ValueError("only nonnegative integer powers")
        out = Expr.const(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __truediv__(self, other) -> "Expr":
        other = _lift(other)
        if not other.is_const() or other.const_value() == 0:
            raise ValueError("division only by a nonzero constant")
        return self * Expr.const(1 / other.const_value())

    def __repr__(self):
        return f"Expr({to_text(self)})"


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Expr.const(Fraction(x))


def _mono_key(m: Monomial):
    return tuple((a.key, p) for a, p in m)


def _mono_mul(m1: Monomial, m2: Monomial) -> Monomial:
    d = dict(m1)
    for a, p in m2:
        d[a] = d.get(a, 0) + p
    return tuple(sorted(d.items(), key=lambda ap: ap[0].key))


def sin(e: Expr) -> Expr:
    if e.is_const() and e.const_value() == 0:
        return Expr.const(0)
    return Expr.atom(Atom("sin", arg=e))


def cos(e: Expr) -> Expr:
    if e.is_const() and e.const_value() == 0:
        return Expr.const(1)
    return Expr.atom(Atom("cos", arg=e))


# --------------------------------------------------------------------------
# differentiation and printing
# --------------------------------------------------------------------------

_DIFF_CACHE: dict = {}


def differentiate(e: Expr, var: int) -> Expr:
    """Exact partial derivative with respect to x_{var} (0-based)."""
    key = (e, var)
    hit = _DIFF_CACHE.get(key)
    if hit is not None:
        return hit
    out = Expr()
    for m, c in e.terms.items():
        for idx, (a, p) in enumerate(m):
            da = _diff_atom(a, var)
            if not da.terms:
                continue
            rest = list(m)
            if p == 1:
                rest.pop(idx)
            else:
                rest[idx] = (a, p - 1)
            out = out + Expr({tuple(rest): c * p}) * da
    _DIFF_CACHE[key] = out
    return out


def _diff_atom(a: Atom, var: int) -> Expr:
    if a.kind == "x":
        return Expr.const(1 if a.index == var else 0)
    inner = differentiate(a.arg, var)
    if not inner.terms:
        return Expr()
    if a.kind == "sin":
        return cos(a.arg) * inner
    return -(sin(a.arg) * inner)


def _frac_text(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def to_text(e: Expr) -> str:
    """DSL text of a canonical expression; parsing it returns an equal expression."""
    if not e.terms:
        return "0"
    parts = []
    for m, c in e.terms.items():
        factors = []
        for a, p in m:
            if a.kind == "x":
                s = f"x{a.index + 1}"
            else:
                s = f"{a.kind}({to_text(a.arg)})"
            factors.append(s if p == 1 else f"{s}^{p}")
        mag = abs(c)
        if not factors:
            body = _frac_text(mag)
        elif mag == 1:
            body = "*".join(factors)
        else:
            body = "*".join([_frac_text(mag)] + factors)
        parts.append(("-" if c < 0 else "+", body))
    text = ("-" if parts[0][0] == "-" else "") + parts[0][1]
    for sign, body in parts[1:]:
        text += f" {sign} {body}"
    return text


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^();−])
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        mt = _TOKEN_RE.match(text, pos)
        if mt is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = mt.lastgroup
        if kind != "ws":
            val = mt.group()
            if val == "−":
                val = "-"
            out.append((kind, val, pos))
        pos = mt.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, params: Mapping[str, Fraction]):
        self.toks = _tokenize(text)
        self.i = 0
        self.params = params

    def peek(self):
        return self.toks[self.i]

    def take(self, val=None):
        tok = self.toks[self.i]
        if val is not None and tok[1] != val:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {val!r}, found {what}", tok[2])
        self.i += 1
        return tok

    def field(self) -> list[Expr]:
        comps = [self.expr()]
        while self.peek()[1] == ";":
            self.take()
            if self.peek()[0] == "end":
                break
            comps.append(self.expr())
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return comps

    def expr(self) -> Expr:
        if self.peek()[1] in "+-" and self.peek()[0] == "op":
            sign = self.take()[1]
            out = self.term()
            if sign == "-":
                out = -out
        else:
            out = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            sign = self.take()[1]
            rhs = self.term()
            out = out + rhs if sign == "+" else out - rhs
        return out

    def term(self) -> Expr:
        out = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            pos = self.peek()[2]
            rhs = self.factor()
            if op == "*":
                out = out * rhs
            else:
                if not rhs.is_const() or rhs.const_value() == 0:
                    raise ParseError("division only by a nonzero constant", pos)
                out = out / rhs
        return out

    def factor(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return -self.factor()
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            tok = self.peek()
            if tok[0] != "num" or not tok[1].isdigit():
                raise ParseError("exponent must be a nonnegative integer", tok[2])
            self.take()
            base = base ** int(tok[1])
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return Expr.const(Fraction(val))
        if kind == "name":
            self.take()
            if val in ("sin", "cos"):
                self.take("(")
                arg = self.expr()
                self.take(")")
                return sin(arg) if val == "sin" else cos(arg)
            mv = re.fullmatch(r"x_?(\d+)", val)
            if mv:
                idx = int(mv.group(1))
                if idx < 1:
                    raise ParseError("variables are numbered from 1", pos)
                return Expr.var(idx - 1)
            if val in self.params:
                return Expr.const(self.params[val])
            raise UnboundSymbol(f"unbound symbol {val!r} at position {pos}")
        if val == "(":
            self.take()
            out = self.expr()
            self.take(")")
            return out
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", pos)


def parse_expr(text: str, params: Mapping[str, object] | None = None) -> Expr:
    p = _Parser(text, _params(params))
    out = p.expr()
    tok = p.peek()
    if tok[0] != "end":
        raise ParseError(f"unexpected {tok[1]!r}", tok[2])
    return out


def _params(params) -> dict:
    return {k: Fraction(str(v)) if isinstance(v, float) else Fraction(v) for k, v in (params or {}).items()}


# --------------------------------------------------------------------------
# vector fields and bootstrap family
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorField:
    components: tuple

    @property
    def n(self) -> int:
        return len(self.components)

    @cached_property
    def is_polynomial(self) -> bool:
        return all(c.is_polynomial() for c in self.components)

    @cached_property
    def degree(self) -> int | None:
        """Total polynomial degree, or None for fields with sin/cos."""
        if not self.is_polynomial:
            return None
        return max(c.degree() for c in self.components)

    def to_text(self) -> str:
        return "; ".join(to_text(c) for c in self.components)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Float evaluation; ``u`` has the state index on its first axis."""
        return np.stack([evaluate(c, u, FLOAT) for c in self.components])


def parse_field(text: str, params: Mapping[str, object] | None = None) -> VectorField:
    """Parse ``component; component; ...`` into a VectorField."""
    comps = _Parser(text, _params(params)).field()
    n = len(comps)
    for c in comps:
        if c.max_var() >= n:
            raise ParseError(f"variable x{c.max_var() + 1} exceeds dimension {n}", 0)
    return VectorField(tuple(comps))


class BootstrapFamily:
    """phi^[0] = id, phi^[q+1] = D phi^[q] . phi, with cached partial derivatives."""

    def __init__(self, vf: VectorField, p: int):
        if p < 1:
            raise ValueError("p must be at least 1")
        self.field = vf
        self.p = p
        n = vf.n
        fams = [tuple(Expr.var(i) for i in range(n))]
        for _ in range(p):
            prev = fams[-1]
            fams.append(tuple(
                sum((differentiate(prev[i], j) * vf.components[j] for j in range(n)), Expr())
                for i in range(n)))
        self.fields = fams
        self._partials: dict = {}

    @property
    def n(self) -> int:
        return self.field.n

    def degree(self, q: int) -> int | None:
        d = self.field.degree
        return None if d is None else q * (d - 1) + 1

    def partial(self, q: int, i: int, idx: tuple) -> Expr:
        """d^{len(idx)} (phi^[q])_i / dx_{idx[0]} ... dx_{idx[-1]} (0-based indices)."""
        idx = tuple(sorted(idx))
        key = (q, i, idx)
        hit = self._partials.get(key)
        if hit is not None:
            return hit
        if not idx:
            out = self.fields[q][i]
        else:
            out = differentiate(self.partial(q, i, idx[:-1]), idx[-1])
        self._partials[key] = out
        return out

    def multisets(self, order: int):
        """Distinct multisets of partial indices of the given order, with multiplicities."""
        n = self.n
        for idx in combinations_with_replacement(range(n), order):
            mult = math.factorial(order)
            for c in Counter(idx).values():
                mult //= math.factorial(c)
            yield idx, mult


def bootstrap(vf: VectorField, p: int) -> BootstrapFamily:
    return BootstrapFamily(vf, p)


# --------------------------------------------------------------------------
# evaluation backends
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Algebra:
    """Arithmetic used to evaluate canonical expressions."""

    const: Callable
    add: Callable
    mul: Callable
    scale: Callable          # (value, Fraction) -> value
    sin: Callable
    cos: Callable
    name: str = ""


def _float_scale(v, c: Fraction):
    return v * float(c)


def _no_trig(_v):
    raise NotPolynomial("sin/cos are not available in this arithmetic")


FLOAT = Algebra(
    const=lambda c, like: np.full(np.shape(like), float(c)),
    add=lambda a, b: a + b,
    mul=lambda a, b: a * b,
    scale=_float_scale,
    sin=np.sin,
    cos=np.cos,
    name="float",
)

INTERVAL = Algebra(
    const=lambda c, like: Interval.from_fraction(c) + Interval.zeros(like.shape),
    add=lambda a, b: a + b,
    mul=lambda a, b: a * b,
    scale=lambda v, c: v * Interval.from_fraction(c) if Fraction(float(c)) != c else v * float(c),
    sin=iv_sin,
    cos=iv_cos,
    name="interval",
)


def _pad_add(a, b):
    la, lb = a.shape[-1], b.shape[-1]
    if la == lb:
        return a + b
    if la < lb:
        a, b = b, a
        la, lb = lb, la
    if isinstance(a, Interval) or isinstance(b, Interval):
        a = as_interval(a).copy()
        b = as_interval(b)
        head = a[..., :lb] + b
        return Interval.concatenate([head, a[..., lb:] + Interval.zeros(head.shape[:-1] + (la - lb,))], axis=-1)
    out = np.array(a, dtype=np.float64, copy=True)
    out[..., :lb] = out[..., :lb] + b
    return out


def _series_const(c, like, interval: bool):
    shape = like.shape[:-1] + (1,)
    if interval:
        return Interval.from_fraction(c) + Interval.zeros(shape)
    return np.full(shape, float(c))


CHEB_FLOAT = Algebra(
    const=lambda c, like: _series_const(c, like, False),
    add=_pad_add,
    mul=cheb.cheb_mul,
    scale=_float_scale,
    sin=_no_trig,
    cos=_no_trig,
    name="cheb_float",
)

CHEB_INTERVAL = Algebra(
    const=lambda c, like: _series_const(c, like, True),
    add=_pad_add,
    mul=cheb.cheb_mul,
    scale=INTERVAL.scale,
    sin=_no_trig,
    cos=_no_trig,
    name="cheb_interval",
)


def taylor_mul(a: Interval, b: Interval) -> Interval:
    """Truncated Cauchy product of interval Taylor series along the last axis."""
    K = a.shape[-1]
    terms = []
    for n in range(K):
        terms.append((a[..., :n + 1] * b[..., n::-1]).sum(axis=-1))
    return Interval.stack(terms, axis=-1)


def taylor_sincos(u: Interval):
    """(sin u, cos u) for an interval Taylor series u along the last axis."""
    K = u.shape[-1]
    S = [iv_sin(u[..., 0])]
    C = [iv_cos(u[..., 0])]
    for n in range(1, K):
        ks = Interval.point(np.arange(1, n + 1, dtype=np.float64))
        du = u[..., 1:n + 1] * ks
        s_n = (du * Interval.stack(C[n - 1::-1], axis=-1)).sum(axis=-1) / float(n)
        c_n = -(du * Interval.stack(S[n - 1::-1], axis=-1)).sum(axis=-1) / float(n)
        S.append(s_n)
        C.append(c_n)
    return Interval.stack(S, axis=-1), Interval.stack(C, axis=-1)


def _taylor_const(c, like):
    out = Interval.zeros(like.shape)
    out[..., 0] = Interval.from_fraction(c) + Interval.zeros(like.shape[:-1])
    return out


TAYLOR = Algebra(
    const=_taylor_const,
    add=lambda a, b: a + b,
    mul=taylor_mul,
    scale=INTERVAL.scale,
    sin=lambda u: taylor_sincos(u)[0],
    cos=lambda u: taylor_sincos(u)[1],
    name="taylor",
)


class Evaluator:
    """Evaluates many expressions at one input, sharing atom values and powers.

    ``values`` has the state index on its first axis; each slice is a value of
    the chosen algebra (float array, Interval, or series with the series index
    last).
    """

    def __init__(self, values, alg: Algebra):
        self.values = values
        self.alg = alg
        self._atoms: dict = {}
        self._powers: dict = {}
        self._exprs: dict = {}
        self._like = values[0]

    def atom(self, a: Atom):
        hit = self._atoms.get(a)
        if hit is None:
            if a.kind == "x":
                hit = self.values[a.index]
            else:
                arg = self(a.arg)
                hit = self.alg.sin(arg) if a.kind == "sin" else self.alg.cos(arg)
            self._atoms[a] = hit
        return hit

    def power(self, a: Atom, p: int):
        key = (a, p)
        hit = self._powers.get(key)
        if hit is None:
            hit = self.atom(a) if p == 1 else self.alg.mul(self.power(a, p - 1), self.atom(a))
            self._powers[key] = hit
        return hit

    def __call__(self, e: Expr):
        hit = self._exprs.get(e)
        if hit is not None:
            return hit
        out = None
        for m, c in e.terms.items():
            if not m:
                term = self.alg.const(c, self._like)
            else:
                prod = None
                for a, p in m:
                    f = self.power(a, p)
                    prod = f if prod is None else self.alg.mul(prod, f)
                term = prod if c == 1 else self.alg.scale(prod, c)
            out = term if out is None else self.alg.add(out, term)
        if out is None:
            out = self.alg.const(Fraction(0), self._like)
        self._exprs[e] = out
        return out


def evaluate(e: Expr, values, alg: Algebra = FLOAT):
    return Evaluator(values, alg)(e)


def eval_family(fam: BootstrapFamily, q: int, i: int, box) -> Interval:
    """Enclosure of (phi^[q])_i over a box (Interval with the state index first)."""
    return Evaluator(as_interval(box), INTERVAL)(fam.fields[q][i])


def tensor_abs_one_norm(fam: BootstrapFamily, q: int, i: int, order: int, box,
                        ev: Evaluator | None = None) -> Interval:
    """Enclosure of sum over all index tuples of |d^order (phi^[q])_i| on the box.

    Each distinct multiset of partials is evaluated once and weighted by its
    multiplicity.  ``order = 0`` gives |(phi^[q])_i|.
    """
    ev = ev or Evaluator(as_interval(box), INTERVAL)
    total = None
    for idx, mult in fam.multisets(order):
        e = fam.partial(q, i, idx)
        if not e.terms:
            continue
        val = abs(as_interval(ev(e))) * float(mult)
        total = val if total is None else total + val
    if total is None:
        return Interval.zeros(as_interval(ev.values[0]).shape)
    return total
