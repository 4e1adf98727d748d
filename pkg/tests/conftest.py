import numpy as np
import pytest
from scipy.integrate import solve_ivp

from radiipoly.cli import load_suite, suite_runs
from radiipoly.problem import spec_from_config
from radiipoly.solver import initial_guess, newton
from radiipoly import validator as V

LORENZ = "sigma*(x2 - x1); rho*x1 - x2 - x1*x3; x1*x2 - beta*x3"
LORENZ_PARAMS = {"sigma": "10", "rho": "28", "beta": "8/3"}
ABC = "A*sin(x3) + C*cos(x2); B*sin(x1) + A*cos(x3); C*sin(x2) + B*cos(x1)"


def lorenz_config(p=2, k=2, m=40, tau="0.2", **kw):
    cfg = {"field": LORENZ, "params": dict(LORENZ_PARAMS), "variant": "ivp",
           "u0": ["-14.68", "-11", "37.67"], "tau": tau, "p": p, "k": k, "m": m}
    cfg.update(kw)
    return cfg


def suite_config(suite, label):
    for cfg, ref in suite_runs(load_suite(suite), "full"):
        if cfg["name"].endswith("/" + label):
            return cfg, ref
    raise KeyError(label)


def solve(cfg):
    spec = spec_from_config(cfg)
    u, rep = newton(spec, initial_guess(spec))
    assert rep.converged, rep.message
    return spec, u


def reference_trajectory(spec, tau, t):
    """High-accuracy solution at rescaled times t, started from the proved initial state."""
    vf = spec.field
    sol = solve_ivp(lambda _s, y: tau * vf(y), (0.0, 1.0), spec.u0_float(), method="DOP853",
                    rtol=1e-13, atol=1e-13, dense_output=True)
    return sol.sol(t)


@pytest.fixture(scope="session")
def lorenz_short():
    """A small Lorenz initial value proof that runs in about a second."""
    spec, u = solve(lorenz_config())
    return V.validate(spec, u)


@pytest.fixture(scope="session")
def abc_one():
    cfg, ref = suite_config("abc-2pi", "A=1")
    spec, u = solve(cfg)
    return V.validate(spec, u), ref


# --------------------------------------------------------------------------
# acceptance report: one line per criterion in the terminal summary
# --------------------------------------------------------------------------

_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(_ACCEPTANCE):
        items = _ACCEPTANCE[c]
        ok = all(i[0] for i in items)
        tr.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'} ({sum(i[0] for i in items)}/{len(items)} checks)")
        for good, detail in items:
            tr.write_line(f"    {'ok  ' if good else 'FAIL'} {detail}")


# --------------------------------------------------------------------------
# interval fuzz helpers
# --------------------------------------------------------------------------

def random_intervals(rng, n, spread=8):
    from radiipoly.interval import Interval
    a = rng.standard_normal(n) * 10.0 ** rng.integers(-spread, spread, n)
    w = np.abs(rng.standard_normal(n)) * 10.0 ** rng.integers(-12, 2, n) * np.abs(a)
    w[rng.random(n) < 0.1] = 0.0
    return Interval(a, a + w)


def pick(rng, x):
    """Random points of x, with a share of exact endpoints."""
    t = rng.random(x.shape)
    pt = np.clip(x.lo + t * (x.hi - x.lo), x.lo, x.hi)
    ends = rng.random(x.shape)
    return np.where(ends < 0.15, x.lo, np.where(ends > 0.85, x.hi, pt))


def count_violations(res, exact):
    from fractions import Fraction
    return sum(not (Fraction(lo) <= q <= Fraction(hi)) for lo, hi, q in zip(res.lo.tolist(), res.hi.tolist(), exact))
