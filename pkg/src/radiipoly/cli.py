"""Command line front end: validate, reproduce, verify, export-orbit.

Exit codes: 0 success, 2 proof failure or rejected certificate, 1 usage or I/O error.
"""
from __future__ import annotations

import csv
import logging
import os
import sys
import time
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import click
import numpy as np
import yaml

from . import chebyshev as cheb
from .interval import Interval, float_to_hex
from .problem import ConfigError, ProblemSpec, load_spec, spec_from_config
from .solver import SolverError, advise_parameters, estimate_field_stats, initial_guess, newton
from .validator import (ValidationError, certificate_unknowns, make_certificate, read_certificate, validate,
                        verify_certificate, write_certificate)

log = logging.getLogger("radiipoly")

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2
SUITES = ("lorenz-ivp", "lorenz-periodic", "abc-2pi", "abc-4pi")
THREADS_ENV = "RADIIPOLY_THREADS"


class UsageFailure(Exception):
    pass


def _thread_limit(threads: int | None):
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    if threads is None:
        return nullcontext()
    if threads < 1:
        raise UsageFailure("thread count must be positive")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def _overrides(spec: ProblemSpec, p, k, m, k0, rhat) -> ProblemSpec:
    for name, v in (("p", p), ("k", k), ("m", m), ("k0", k0)):
        if v is not None and v < 1:
            raise UsageFailure(f"--{name} must be positive")
    if rhat is not None and rhat <= 0:
        raise UsageFailure("--rhat must be positive")
    try:
        return spec.with_discretization(p=p, k=k, m=m, k0=k0, rhat=rhat)
    except ConfigError as exc:
        raise UsageFailure(str(exc)) from exc


def run_proof(spec: ProblemSpec):
    """Numerical solve followed by validation; returns (Validation, newton report, seconds)."""
    t0 = time.perf_counter()
    u, rep = newton(spec, initial_guess(spec))
    if not rep.converged:
        log.warning("Newton did not converge (residual %.3e): %s", rep.residual, rep.message)
    res = validate(spec, u)
    return res, rep, time.perf_counter() - t0


def _advice_text(spec: ProblemSpec) -> str:
    try:
        stats = {spec.p: estimate_field_stats(spec, spec.p)}
    except SolverError as exc:
        return f"advisor unavailable: {exc}"
    (adv,) = advise_parameters(stats, float(spec.tau), [(spec.p, spec.k, spec.m)])
    verdict = "satisfied" if adv.feasible else "violated"
    text = f"order-one necessary condition {verdict} (lhs {adv.lhs:.3g})"
    if adv.feasible:
        text += f"; the nonlinear terms dominate, try m = {2 * spec.m} or p = {min(spec.p + 1, spec.k + 1)}"
    else:
        text += f"; increase m (e.g. m = {2 * spec.m}) or p"
    return text


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

REFERENCE_KEYS = ("scale", "label", "tau_reference", "tau_contains", "r_reference", "expect", "memory_heavy")


def load_suite(name: str) -> dict:
    """A shipped suite by name, or a suite file given by path."""
    if name in SUITES:
        text = resources.files("radiipoly").joinpath("suites", f"{name}.yaml").read_text()
    elif name.endswith((".yaml", ".yml")) and Path(name).is_file():
        text = Path(name).read_text()
    else:
        raise UsageFailure(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or pass a suite file")
    suite = yaml.safe_load(text)
    if not isinstance(suite, dict) or not {"name", "base", "runs"} <= suite.keys():
        raise UsageFailure(f"suite {name!r} needs name, base and runs")
    return suite


def suite_runs(suite: dict, scale: str) -> list[tuple[dict, dict]]:
    """(config, reference) pairs; desk scale keeps desk runs, full keeps all."""
    out = []
    for run in suite["runs"]:
        if scale == "desk" and run.get("scale") != "desk":
            continue
        cfg = dict(suite["base"])
        params = dict(cfg.get("params") or {})
        params.update(run.get("params") or {})
        cfg.update({k: v for k, v in run.items() if k not in REFERENCE_KEYS and k != "params"})
        cfg["params"] = params
        cfg["name"] = f"{suite['name']}/{run.get('label', '')}"
        ref = {k: run[k] for k in REFERENCE_KEYS if k in run}
        out.append((cfg, ref))
    return out


CSV_HEADER = ["name", "p", "k", "m", "tau", "success", "r", "rinf", "tau_lo", "tau_hi",
              "r_hex", "rinf_hex", "tau_lo_hex", "tau_hi_hex", "wall_time"]


def result_row(spec: ProblemSpec, res, seconds: float) -> list:
    tau = res.tau_enclosure
    lo = float(tau.lo) if tau is not None else float("nan")
    hi = float(tau.hi) if tau is not None else float("nan")

    def hx(x):
        return float_to_hex(x) if np.isfinite(x) else ""

    return [spec.name, spec.p, spec.k, spec.m, repr(res.tau_bar), int(res.success),
            f"{res.r:.6e}" if res.success else "", f"{res.rinf:.6e}" if np.isfinite(res.rinf) else "",
            repr(lo) if tau is not None else "", repr(hi) if tau is not None else "",
            hx(res.r) if res.success else "", hx(res.rinf), hx(lo) if tau is not None else "",
            hx(hi) if tau is not None else "", f"{seconds:.2f}"]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Computer-assisted proofs for ODE solutions with radii polynomials."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("validate")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--p", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--m", type=int, default=None)
@click.option("--k0", type=int, default=None)
@click.option("--rhat", type=float, default=None)
@click.option("--threads", type=int, default=None, help=f"BLAS thread cap (default: ${THREADS_ENV}).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Certificate path.")
def cmd_validate(config, p, k, m, k0, rhat, threads, out):
    """Solve and validate the problem described by CONFIG."""
    try:
        spec = load_spec(config)
    except (OSError, yaml.YAMLError, ConfigError, ValueError) as exc:
        raise UsageFailure(f"cannot load {config}: {exc}") from exc
    spec = _overrides(spec, p, k, m, k0, rhat)
    with _thread_limit(threads):
        try:
            res, rep, seconds = run_proof(spec)
        except SolverError as exc:
            click.echo(f"proof failed: {exc}", err=True)
            return EXIT_FAIL
    if not res.success:
        click.echo(f"proof failed after {seconds:.1f}s: {res.message}", err=True)
        click.echo(f"advisor: {_advice_text(spec)}", err=True)
        return EXIT_FAIL
    path = Path(out) if out else Path(config).with_suffix(".cert.json")
    try:
        write_certificate(make_certificate(res), path)
    except OSError as exc:
        raise UsageFailure(f"cannot write {path}: {exc}") from exc
    click.echo(f"proved: r = {res.r:.6e}, r_inf = {res.rinf:.6e}, tau in [{float(res.tau_enclosure.lo)!r}, "
               f"{float(res.tau_enclosure.hi)!r}] ({seconds:.1f}s); certificate {path}")
    return EXIT_OK


@cli.command("reproduce")
@click.argument("suite")
@click.option("--scale", type=click.Choice(["desk", "full"]), default="desk")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path (default: stdout).")
@click.option("--threads", type=int, default=None)
@click.option("--skip-heavy", is_flag=True, help="Skip runs flagged memory-heavy.")
def cmd_reproduce(suite, scale, out, threads, skip_heavy):
    """Run a shipped experiment suite and print one CSV row per run."""
    runs = suite_runs(load_suite(suite), scale)
    if skip_heavy:
        runs = [(c, r) for c, r in runs if not r.get("memory_heavy")]
    fh = open(out, "w", newline="") if out else sys.stdout
    ok = True
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        with _thread_limit(threads):
            for cfg, ref in runs:
                spec = spec_from_config(cfg)
                try:
                    res, _, seconds = run_proof(spec)
                except SolverError as exc:
                    log.warning("%s: %s", spec.name, exc)
                    ok = False
                    continue
                writer.writerow(result_row(spec, res, seconds))
                fh.flush()
                ok = ok and (res.success or ref.get("expect") == "failure")
    finally:
        if out:
            fh.close()
    return EXIT_OK if ok else EXIT_FAIL


@cli.command("verify")
@click.argument("certificate", type=click.Path(dir_okay=False))
@click.option("--threads", type=int, default=None)
def cmd_verify(certificate, threads):
    """Independently re-check a certificate."""
    try:
        cert = read_certificate(certificate)
    except (OSError, ValueError, ValidationError) as exc:
        raise UsageFailure(f"cannot read {certificate}: {exc}") from exc
    with _thread_limit(threads):
        verdict = verify_certificate(cert)
    if verdict.accepted and verdict.proved:
        click.echo(f"accepted: {verdict.reason}")
        return EXIT_OK
    if verdict.accepted:
        click.echo(f"accepted (records a failed proof): {verdict.reason}")
        return EXIT_FAIL
    click.echo(f"rejected: {verdict.reason}", err=True)
    return EXIT_FAIL


def orbit_samples(cert: dict, samples: int):
    """(t, values (n, samples) as Interval centres, half-width) from a proved certificate."""
    spec, u = certificate_unknowns(cert)
    if cert.get("verdict") != "proved":
        raise ValidationError("certificate does not record a proof")
    r = float.fromhex(cert["r"])
    rinf = float.fromhex(cert["rinf"])
    lam = cheb.lebesgue_constant(spec.k)
    half = float(((lam + rinf) * r).hi)
    t = np.linspace(0.0, 1.0, samples) if samples > 0 else np.zeros(0)
    j, s = u.poly.locate(t)
    vals = cheb.clenshaw(Interval.point(u.poly.coeffs[:, j, :]), Interval.point(s))
    return t, vals, half


@cli.command("export-orbit")
@click.argument("certificate", type=click.Path(dir_okay=False))
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path (default: stdout).")
def cmd_export_orbit(certificate, samples, out):
    """Sample a certified orbit with its enclosure half-width (rescaled time in [0, 1])."""
    if samples < 0:
        raise UsageFailure("--samples must be nonnegative")
    try:
        cert = read_certificate(certificate)
        t, vals, half = orbit_samples(cert, samples)
    except (OSError, ValueError, KeyError, ValidationError) as exc:
        raise UsageFailure(f"cannot export {certificate}: {exc}") from exc
    n = vals.shape[0]
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"u{i + 1}" for i in range(n)] + ["half_width", "half_width_hex"])
        mid = vals.mid()
        # one constant half-width: ball radius plus the widest Clenshaw enclosure, rounded up
        spread = float(np.max(np.maximum(vals.hi - mid, mid - vals.lo), initial=0.0))
        hw = float(np.nextafter(np.nextafter(half + spread, np.inf), np.inf)) if samples > 0 else half
        for idx in range(len(t)):
            writer.writerow([repr(float(t[idx]))] + [repr(float(mid[i, idx])) for i in range(n)]
                            + [repr(hw), float_to_hex(hw)])
    finally:
        if out:
            fh.close()
    return EXIT_OK


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="radiipoly", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except (click.ClickException, UsageFailure) as exc:
        msg = exc.format_message() if isinstance(exc, click.ClickException) else str(exc)
        click.echo(f"error: {msg}", err=True)
        return EXIT_USAGE
    except (ConfigError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return int(rv) if isinstance(rv, int) else EXIT_OK


def entry() -> None:
    sys.exit(main())
