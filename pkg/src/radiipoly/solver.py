"""Non-rigorous numerics: initial guesses, Newton's method, the numerical
inverse and the parameter advisor.  Nothing here needs to be trusted; the
validator certifies whatever these routines produce."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from . import chebyshev as cheb
from .field import BootstrapFamily, Evaluator, FLOAT, bootstrap
from .problem import FloatProblem, ProblemSpec, Unknowns

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual: float
    step_norms: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    converged: bool = False
    message: str = ""


# --------------------------------------------------------------------------
# initial guess
# --------------------------------------------------------------------------

def initial_guess(spec: ProblemSpec, rtol: float = 1e-10, atol: float = 1e-12) -> Unknowns:
    """Integrate u' = tau phi(u) on [0, 1] from u0 and sample at the grid nodes."""
    vf = spec.field
    tau = float(spec.tau)
    grid = spec.grid()
    times = grid.node_times()

    def rhs(_t, y):
        return tau * vf(y)

    sol = solve_ivp(rhs, (0.0, 1.0), spec.u0_float(), method=spec.guess_method,
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise SolverError(f"integrator failed: {sol.message}")
    vals = sol.sol(times.ravel()).reshape(spec.n, spec.m, spec.k + 1)
    return Unknowns(cheb.PiecewisePoly.from_values(grid, vals), tau)


# --------------------------------------------------------------------------
# Newton
# --------------------------------------------------------------------------

def newton(spec: ProblemSpec, guess: Unknowns, tol: float = 1e-12, max_iter: int = 40,
           fam: BootstrapFamily | None = None, problem: FloatProblem | None = None,
           max_halvings: int = 20) -> tuple[Unknowns, SolveReport]:
    """Damped Newton on the float node equations.

    Converged when the residual sup-norm is at most ``tol * max(1, |u|_inf)``.
    Each step is halved (up to ``max_halvings`` times) until the residual
    decreases.  Non-convergence is reported, not raised.
    """
    fp = problem or FloatProblem(spec, fam)
    x = guess.flatten(spec.tau_unknown)
    F = fp.residual(x)
    res = float(np.max(np.abs(F)))
    rep = SolveReport(0, res, residuals=[res])
    for it in range(1, max_iter + 1):
        thresh = tol * max(1.0, float(np.max(np.abs(x))))
        if res <= thresh:
            rep.converged = True
            break
        J = fp.jacobian(x)
        try:
            lu = spla.splu(J)
            dx = lu.solve(-F)
        except RuntimeError as exc:
            rep.message = f"singular Jacobian: {exc}"
            break
        if not np.all(np.isfinite(dx)):
            rep.message = "non-finite Newton step"
            break
        t = 1.0
        for _ in range(max_halvings + 1):
            xn = x + t * dx
            Fn = fp.residual(xn)
            rn = float(np.max(np.abs(Fn)))
            if np.isfinite(rn) and rn < res:
                break
            t *= 0.5
        else:
            rep.iterations = it
            rep.message = "no decrease along the Newton direction"
            # a stalled step at rounding level is still convergence
            rep.converged = res <= 1e3 * thresh
            break
        x, F, res = xn, Fn, rn
        rep.iterations = it
        rep.step_norms.append(float(np.max(np.abs(t * dx))))
        rep.residuals.append(res)
        log.debug("newton %d: residual %.3e step %.3e", it, res, rep.step_norms[-1])
    else:
        rep.converged = res <= tol * max(1.0, float(np.max(np.abs(x))))
        if not rep.converged:
            rep.message = "max_iter exceeded"
    rep.residual = res
    return fp.unknowns(x), rep


def numerical_inverse(J) -> np.ndarray:
    """Dense float inverse via LU.  Injectivity is certified later, not assumed."""
    M = J.toarray() if hasattr(J, "toarray") else np.asarray(J, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("numerical_inverse needs a square matrix")
    try:
        A = sla.inv(M, overwrite_a=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise SolverError(f"numerically singular matrix: {exc}") from exc
    if not np.all(np.isfinite(A)):
        raise SolverError("numerically singular matrix")
    return A


# --------------------------------------------------------------------------
# parameter advisor
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldStats:
    """Constants of the order-one feasibility heuristic for one bootstrap order p.

    ``alpha`` scales the finite-part order-one term and ``beta`` the tail one;
    both are estimated as the largest row sum of |D phi^[p]| along a reference
    trajectory (see ``estimate_field_stats``).
    """

    p: int
    alpha: float
    beta: float


def estimate_field_stats(spec: ProblemSpec, p: int, samples: int = 20001) -> FieldStats:
    """alpha = beta = max_t max_i sum_j |d (phi^[p])_i / dx_j (u(t))| on an accurate trajectory."""
    vf = spec.field
    tau = float(spec.tau)
    sol = solve_ivp(lambda _t, y: tau * vf(y), (0.0, 1.0), spec.u0_float(), method="DOP853",
                    rtol=1e-12, atol=1e-12, dense_output=True)
    if not sol.success:
        raise SolverError(f"integrator failed: {sol.message}")
    pts = sol.sol(np.linspace(0.0, 1.0, samples))
    fam = bootstrap(vf, p)
    ev = Evaluator(pts, FLOAT)
    best = 0.0
    for i in range(vf.n):
        row = np.zeros(samples)
        for j in range(vf.n):
            e = fam.partial(p, i, (j,))
            if e.terms:
                row += np.abs(ev(e) * np.ones(samples))
        best = max(best, float(row.max()))
    return FieldStats(p, best, best)


@dataclass(frozen=True)
class Advice:
    p: int
    k: int
    m: int
    lhs: float
    rinf_lo: float
    rinf_hi: float
    feasible: bool


def advise_parameters(stats: dict, tau: float, candidates) -> list[Advice]:
    """Evaluate the order-one necessary condition for each (p, k, m).

    ``stats`` maps p to FieldStats.  For each candidate the left-hand side
    (tau/m)^p C_opt (beta + alpha beta Lambda_k (tau/m)^p / p!) and the
    admissible r_inf window are reported; feasible means lhs < 1 and a
    nonempty window.
    """
    out = []
    for p, k, m in candidates:
        st = stats[p]
        c = float(cheb.c_opt(k, p).hi)
        lam = float(cheb.lebesgue_constant(k).hi)
        eps = (tau / m) ** p
        lhs = eps * c * (st.beta + st.alpha * st.beta * lam * eps / factorial(p))
        slack = 1.0 - st.beta * c * eps
        lo = st.beta * c * lam * eps / slack if slack > 0 else np.inf
        hi = factorial(p) / (st.alpha * eps) if st.alpha > 0 else np.inf
        feasible = bool(lhs < 1.0 and slack > 0 and lo < hi)
        out.append(Advice(p, k, m, lhs, lo, hi, feasible))
    return out
