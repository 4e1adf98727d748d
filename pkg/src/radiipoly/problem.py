"""The finite zero-finding problem on a refined Chebyshev grid.

Unknowns are per-segment Chebyshev coefficients of each component, flattened
with the component index outermost, then the segment, then the coefficient
index; problems with an unknown period append tau.  The float residual uses
Gauss-Legendre quadrature on [-1, x_l]; the rigorous residual lives in the
validator.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from math import factorial
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import yaml

from . import chebyshev as cheb
from .field import FLOAT, BootstrapFamily, Evaluator, VectorField, bootstrap, parse_field
from .interval import PI, Interval

VARIANTS = ("ivp", "periodic", "shift")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# exact scalars from config text
# --------------------------------------------------------------------------

_PI_RE = re.compile(r"^\s*(?:(?P<coef>[-+]?[0-9./eE+-]*?)\s*\*?\s*)?pi\s*$")


@dataclass(frozen=True)
class ExactScalar:
    """a + b*pi with rational a, b; keeps config values exact for rigorous use."""

    a: Fraction
    b: Fraction = Fraction(0)

    @staticmethod
    def parse(v) -> "ExactScalar":
        if isinstance(v, ExactScalar):
            return v
        if isinstance(v, (int, Fraction)):
            return ExactScalar(Fraction(v))
        if isinstance(v, float):
            return ExactScalar(Fraction(repr(v)))
        text = str(v).strip()
        mt = _PI_RE.match(text)
        if mt:
            coef = (mt.group("coef") or "").strip()
            if coef in ("", "+"):
                c = Fraction(1)
            elif coef == "-":
                c = Fraction(-1)
            else:
                c = Fraction(coef)
            return ExactScalar(Fraction(0), c)
        try:
            return ExactScalar(Fraction(text))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot read {v!r} as an exact number") from exc

    def interval(self) -> Interval:
        out = Interval.from_fraction(self.a)
        if self.b:
            out = out + PI * Interval.from_fraction(self.b)
        return out

    def __float__(self) -> float:
        return float(self.interval().mid())

    def text(self) -> str:
        parts = []
        if self.a or not self.b:
            parts.append(str(self.a))
        if self.b:
            parts.append(f"{self.b}*pi")
        return " + ".join(parts)


# --------------------------------------------------------------------------
# problem description
# --------------------------------------------------------------------------

@dataclass
class ProblemSpec:
    """What to prove: the field, the variant data and the discretization (p, k, m).

    ``u0`` is the initial value for ``ivp`` and the phase anchor otherwise.
    ``tau`` is the fixed time (``ivp``) or the initial guess for the period.
    """

    field_text: str
    params: dict
    variant: str
    u0: tuple
    tau: ExactScalar
    p: int
    k: int
    m: int
    v0: tuple | None = None
    shift: tuple | None = None
    k0: int = 8
    rhat: float = 1e-2
    tau_weight: float = 1.0
    name: str = ""
    guess_method: str = "RK45"
    breakpoints: tuple | None = None
    _field: VectorField | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.p < 1 or self.k < 1 or self.m < 1:
            raise ConfigError("p, k and m must be positive")
        if self.p > self.k + 1:
            raise ConfigError("need p <= k + 1")
        self.u0 = tuple(ExactScalar.parse(x) for x in self.u0)
        self.tau = ExactScalar.parse(self.tau)
        if float(self.tau) <= 0:
            raise ConfigError("tau must be positive")
        if self.shift is not None:
            self.shift = tuple(ExactScalar.parse(x) for x in self.shift)
        if self.v0 is not None:
            self.v0 = tuple(float(ExactScalar.parse(x)) for x in self.v0)
        if self.tau_weight <= 0:
            raise ConfigError("tau_weight must be positive")
        if len(self.u0) != self.field.n:
            raise ConfigError("u0 has the wrong dimension")
        if self.variant == "shift" and (self.shift is None or len(self.shift) != self.field.n):
            raise ConfigError("shift variant needs a shift vector of dimension n")
        if self.v0 is not None and not np.any(self.v0):
            raise ConfigError("phase direction v0 must be nonzero")

    # derived ---------------------------------------------------------------
    @property
    def field(self) -> VectorField:
        if self._field is None:
            self._field = parse_field(self.field_text, self.params)
        return self._field

    @property
    def n(self) -> int:
        return self.field.n

    @property
    def tau_unknown(self) -> bool:
        return self.variant != "ivp"

    @property
    def size(self) -> int:
        return self.n * self.m * (self.k + 1) + (1 if self.tau_unknown else 0)

    def grid(self) -> cheb.RefinedGrid:
        return cheb.make_grid(self.m, self.k, None if self.breakpoints is None else np.array(self.breakpoints))

    def u0_float(self) -> np.ndarray:
        return np.array([float(x) for x in self.u0])

    def u0_interval(self) -> Interval:
        return Interval.stack([x.interval() for x in self.u0])

    def shift_float(self) -> np.ndarray:
        return np.array([float(x) for x in self.shift]) if self.shift else np.zeros(self.n)

    def shift_interval(self) -> Interval:
        if not self.shift:
            return Interval.zeros(self.n)
        return Interval.stack([x.interval() for x in self.shift])

    def phase_direction(self) -> np.ndarray:
        """v0 as binary64 data (defaults to the field at the float anchor)."""
        if self.v0 is not None:
            return np.array(self.v0, dtype=np.float64)
        return np.asarray(self.field(self.u0_float()), dtype=np.float64)

    def phase_anchor(self) -> np.ndarray:
        """Anchor of the phase plane, taken as exact binary64 data."""
        return self.u0_float()

    def with_discretization(self, p=None, k=None, m=None, k0=None, rhat=None) -> "ProblemSpec":
        return replace(self, p=p or self.p, k=k or self.k, m=m or self.m,
                       k0=self.k0 if k0 is None else k0, rhat=self.rhat if rhat is None else rhat,
                       u0=self.u0, tau=self.tau, _field=self._field)

    def to_config(self) -> dict:
        cfg = {
            "name": self.name,
            "field": self.field_text,
            "params": {k: str(Fraction(v)) for k, v in self.params.items()},
            "variant": self.variant,
            "u0": [x.text() for x in self.u0],
            "tau": self.tau.text(),
            "p": self.p, "k": self.k, "m": self.m, "k0": self.k0,
            "rhat": self.rhat, "tau_weight": self.tau_weight,
            "guess_method": self.guess_method,
        }
        if self.v0 is not None:
            cfg["v0"] = [float(x).hex() for x in self.v0]
        if self.shift is not None:
            cfg["shift"] = [x.text() for x in self.shift]
        if self.breakpoints is not None:
            cfg["breakpoints"] = [float(x).hex() for x in self.breakpoints]
        return cfg

    def digest(self) -> str:
        text = json.dumps(self.to_config(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def _param_value(v) -> Fraction:
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(str(v))


def spec_from_config(cfg: dict) -> ProblemSpec:
    """Build a ProblemSpec from a parsed configuration mapping."""
    try:
        params = {k: _param_value(v) for k, v in (cfg.get("params") or {}).items()}
        v0 = cfg.get("v0")
        if v0 is not None:
            v0 = [float.fromhex(x) if isinstance(x, str) and "0x" in x else x for x in v0]
        bps = cfg.get("breakpoints")
        if bps is not None:
            bps = tuple(float.fromhex(x) if isinstance(x, str) else float(x) for x in bps)
        return ProblemSpec(
            field_text=cfg["field"],
            params=params,
            variant=cfg.get("variant", "ivp"),
            u0=tuple(cfg["u0"]),
            tau=cfg["tau"],
            p=int(cfg["p"]), k=int(cfg["k"]), m=int(cfg["m"]),
            v0=None if v0 is None else tuple(v0),
            shift=None if cfg.get("shift") is None else tuple(cfg["shift"]),
            k0=int(cfg.get("k0", 8)),
            rhat=float(cfg.get("rhat", 1e-2)),
            tau_weight=float(cfg.get("tau_weight", 1.0)),
            name=str(cfg.get("name", "")),
            guess_method=str(cfg.get("guess_method", "RK45")),
            breakpoints=bps,
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc.args[0]!r}") from exc


def load_spec(path: str | Path) -> ProblemSpec:
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return spec_from_config(cfg)


# --------------------------------------------------------------------------
# unknowns
# --------------------------------------------------------------------------

@dataclass
class Unknowns:
    poly: cheb.PiecewisePoly
    tau: float

    def flatten(self, with_tau: bool) -> np.ndarray:
        flat = self.poly.coeffs.reshape(-1)
        return np.concatenate([flat, [self.tau]]) if with_tau else flat.copy()

    @staticmethod
    def from_flat(spec: ProblemSpec, x: np.ndarray, grid: cheb.RefinedGrid | None = None) -> "Unknowns":
        grid = grid or spec.grid()
        N = spec.n * spec.m * (spec.k + 1)
        coeffs = np.asarray(x[:N], dtype=np.float64).reshape(spec.n, spec.m, spec.k + 1)
        tau = float(x[N]) if spec.tau_unknown else float(spec.tau)
        return Unknowns(cheb.PiecewisePoly(grid, coeffs), tau)


def row_index(spec: ProblemSpec, i, j, l):
    return (np.asarray(i) * spec.m + np.asarray(j)) * (spec.k + 1) + np.asarray(l)


# --------------------------------------------------------------------------
# anchors
# --------------------------------------------------------------------------

def left_anchor(u: Unknowns, j: int, spec: ProblemSpec) -> np.ndarray:
    """u(t_j^-) with the variant's convention at j = 0 (float)."""
    return anchors_float(spec, u.poly.coeffs)[:, j]


def anchors_float(spec: ProblemSpec, coeffs: np.ndarray) -> np.ndarray:
    right = coeffs.sum(axis=-1)                       # (n, m) values at segment right ends
    out = np.empty_like(right)
    out[:, 1:] = right[:, :-1]
    if spec.variant == "ivp":
        out[:, 0] = spec.u0_float()
    else:
        out[:, 0] = right[:, -1] - spec.shift_float()
    return out


def anchors_interval(spec: ProblemSpec, coeffs: np.ndarray) -> Interval:
    right = Interval.point(coeffs).sum(axis=-1)
    if spec.variant == "ivp":
        first = spec.u0_interval()
    else:
        first = right[:, -1] - spec.shift_interval()
    return Interval.concatenate([first[:, None], right[:, :-1]], axis=1)


# --------------------------------------------------------------------------
# float residual and Jacobian
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadRule:
    """Gauss-Legendre rule on [-1, x_l] for each node, with the kernel folded in."""

    s: np.ndarray        # (k+1, Q) abscissae
    kern: np.ndarray     # (k+1, Q) weights * (x_l - s)^(p-1)/(p-1)!
    T: np.ndarray        # (k+1, Q, k+1) T_n(s)


def quad_rule(k: int, p: int, Q: int) -> QuadRule:
    xi, om = np.polynomial.legendre.leggauss(Q)
    x = cheb.cheb_points_float(k)
    half = 0.5 * (x + 1.0)
    s = -1.0 + half[:, None] * (xi[None, :] + 1.0)
    w = half[:, None] * om[None, :]
    kern = w * (x[:, None] - s) ** (p - 1) / factorial(p - 1)
    T = np.cos(np.arange(k + 1)[None, None, :] * np.arccos(np.clip(s, -1, 1))[..., None])
    return QuadRule(s, kern, T)


def default_quad_order(spec: ProblemSpec, fam: BootstrapFamily) -> int:
    deg = fam.degree(spec.p)
    if deg is None:
        return max(12, 2 * spec.k + 8)
    # exact for the polynomial integrand of degree deg*k + p - 1
    return (deg * spec.k + spec.p) // 2 + 1


class FloatProblem:
    """Float residual and sparse Jacobian of the node equations (coefficient coordinates)."""

    def __init__(self, spec: ProblemSpec, fam: BootstrapFamily | None = None, Q: int | None = None):
        self.spec = spec
        self.fam = fam or bootstrap(spec.field, spec.p)
        self.grid = spec.grid()
        self.Q = Q or default_quad_order(spec, self.fam)
        self.rule = quad_rule(spec.k, spec.p, self.Q)
        self.V = cheb.value_matrix(spec.k).mid()
        self.H = 0.5 * np.diff(self.grid.mesh.breakpoints)             # (m,)
        self.h = self.H[:, None] * (cheb.cheb_points_float(spec.k) + 1.0)[None, :]   # (m, k+1)
        self.v0 = spec.phase_direction() if spec.tau_unknown else None
        self.a0 = spec.phase_anchor() if spec.tau_unknown else None

    def unknowns(self, x: np.ndarray) -> Unknowns:
        return Unknowns.from_flat(self.spec, x, self.grid)

    def _quad_values(self, coeffs):
        # u at all quadrature points: (n, m, k+1, Q)
        return np.einsum("ijn,lqn->ijlq", coeffs, self.rule.T, optimize=True)

    def residual(self, x: np.ndarray) -> np.ndarray:
        spec, fam = self.spec, self.fam
        u = self.unknowns(x)
        c, tau = u.poly.coeffs, u.tau
        n, p = spec.n, spec.p
        anc = anchors_float(spec, c)                                     # (n, m)
        ev_a = Evaluator(anc, FLOAT)
        G = np.zeros((n, spec.m, spec.k + 1))
        for q in range(p):
            w = tau ** q * self.h ** q / factorial(q)                    # (m, k+1)
            for i in range(n):
                G[i] += w * ev_a(fam.fields[q][i])[:, None]
        ev_q = Evaluator(self._quad_values(c), FLOAT)
        scale = tau ** p * self.H[:, None] ** p                         # (m, 1)
        for i in range(n):
            psi = ev_q(fam.fields[p][i])                                 # (m, k+1, Q)
            G[i] += scale * np.einsum("jlq,lq->jl", psi, self.rule.kern)
        G -= c @ self.V.T
        out = G.reshape(-1)
        if spec.tau_unknown:
            u0 = c[:, 0, :] @ self.V[0]                                   # values at t = 0
            out = np.concatenate([out, [np.dot(self.v0, u0 - self.a0)]])
        return out

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        spec, fam = self.spec, self.fam
        u = self.unknowns(x)
        c, tau = u.poly.coeffs, u.tau
        n, m, k, p = spec.n, spec.m, spec.k, spec.p
        K = k + 1
        N = n * m * K
        size = spec.size
        rows, cols, vals = [], [], []
        jj = np.arange(m)
        ll = np.arange(K)
        nn = np.arange(K)

        # integral blocks and -T_n(x_l)
        ev_q = Evaluator(self._quad_values(c), FLOAT)
        scale = tau ** p * self.H ** p                                   # (m,)
        for i in range(n):
            for i2 in range(n):
                e = fam.partial(p, i, (i2,))
                if not e.terms:
                    blk = np.zeros((m, K, K))
                else:
                    d = ev_q(e) * np.ones((m, K, self.Q))               # (m, K, Q)
                    blk = np.einsum("jlq,lq,lqn->jln", d, self.rule.kern, self.rule.T) * scale[:, None, None]
                if i == i2:
                    blk = blk - self.V[None, :, :]
                r = row_index(spec, i, jj[:, None, None], ll[None, :, None])
                cidx = row_index(spec, i2, jj[:, None, None], nn[None, None, :])
                rows.append(np.broadcast_to(r, blk.shape).ravel())
                cols.append(np.broadcast_to(cidx, blk.shape).ravel())
                vals.append(blk.ravel())

        # anchor dependence: anchor_j = right value of segment j-1 (or of m-1 for j = 0)
        anc = anchors_float(spec, c)
        ev_a = Evaluator(anc, FLOAT)
        src = np.concatenate([[m - 1], jj[:-1]])
        segs = jj if spec.variant != "ivp" else jj[1:]
        for i in range(n):
            for i2 in range(n):
                coef = np.zeros((m, K))
                for q in range(p):
                    e = fam.partial(q, i, (i2,))
                    if not e.terms:
                        continue
                    dv = ev_a(e) * np.ones(m)
                    coef += (tau ** q * self.h ** q / factorial(q)) * dv[:, None]
                coef = coef[segs]
                r = row_index(spec, i, segs[:, None, None], ll[None, :, None])
                cidx = row_index(spec, i2, src[segs][:, None, None], nn[None, None, :])
                blk = np.broadcast_to(coef[:, :, None], (len(segs), K, K))
                rows.append(np.broadcast_to(r, blk.shape).ravel())
                cols.append(np.broadcast_to(cidx, blk.shape).ravel())
                vals.append(blk.ravel())

        if spec.tau_unknown:
            # d/dtau column
            dcol = np.zeros((n, m, K))
            for q in range(1, p):
                w = q * tau ** (q - 1) * self.h ** q / factorial(q)
                for i in range(n):
                    dcol[i] += w * ev_a(fam.fields[q][i])[:, None]
            dscale = p * tau ** (p - 1) * self.H[:, None] ** p
            for i in range(n):
                psi = ev_q(fam.fields[p][i]) * np.ones((m, K, self.Q))
                dcol[i] += dscale * np.einsum("jlq,lq->jl", psi, self.rule.kern)
            rows.append(np.arange(N))
            cols.append(np.full(N, N))
            vals.append(dcol.ravel())
            # phase row
            for i in range(n):
                rows.append(np.full(K, N))
                cols.append(row_index(spec, i, 0, nn))
                vals.append(self.v0[i] * self.V[0])
        J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size))
        return J.tocsc()


def eval_G_nodes(spec: ProblemSpec, u: Unknowns, fam: BootstrapFamily | None = None,
                 Q: int | None = None) -> np.ndarray:
    fp = FloatProblem(spec, fam, Q)
    return fp.residual(u.flatten(spec.tau_unknown))


def jacobian(spec: ProblemSpec, u: Unknowns, fam: BootstrapFamily | None = None,
             Q: int | None = None) -> sp.csc_matrix:
    fp = FloatProblem(spec, fam, Q)
    return fp.jacobian(u.flatten(spec.tau_unknown))
