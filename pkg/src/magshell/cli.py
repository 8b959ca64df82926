"""magshell command-line front end.

Exit codes: 0 success, 2 usage error or unmet precondition, 3 failed
verification (including a level with no stabilizing form and a solver that
does not converge).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from decimal import Decimal, InvalidOperation

import click
import numpy as np

from . import dynamics, integrate, mane, rabinowitz, stability, systems
from .errors import (DimensionMismatch, InvalidForm, MagshellError, NoConvergence, NotStable,
                     PreconditionFailed, Unsupported, VerificationFailure)
from .lie_core import Family
from .systems import PhaseState

SYSTEMS = [f.value for f in Family]
EXIT_USAGE = 2
EXIT_VERIFY = 3

# CSV headers per record kind
ORBIT_COLUMNS = ["system", "k", "C", "A", "mu", "T", "l", "period", "omega", "contractible", "homotopy"]
SWEEP_COLUMNS = {
    "entropy": ["k", "no_hyperbolic", "margin"],
    "orbits": ["k", "count", "C", "T", "omega"],
    "contact": ["k", "verdict", "margin"],
    "displace": ["k", "exit_time", "observed_exit"],
}


# -- emission ------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(_cell(x) for x in v)
    if isinstance(v, dict):
        return json.dumps(_jsonable(v), sort_keys=True, separators=(",", ":"))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def emit(records, fmt: str, columns=None) -> bytes:
    """Serialise a list of flat records.  CSV uses ``columns`` (or the keys of
    the first record) as the header; an empty list gives a header-only file."""
    records = list(records)
    if fmt == "json":
        return (json.dumps(_jsonable(records), indent=2, sort_keys=True) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if columns is None:
        columns = list(records[0].keys()) if records else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue().encode()


def _write(data: bytes, out: str | None) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        with open(out, "wb") as fh:
            fh.write(data)


# -- parameter plumbing ----------------------------------------------------------

def threads() -> int:
    raw = os.environ.get("MAGSHELL_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def parallel_map(fn, items):
    """Ordered map over a thread pool capped by MAGSHELL_THREADS."""
    items = list(items)
    n = min(threads(), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def energy_grid(k_min: str, k_max: str, steps: int) -> list[float]:
    """steps+1 equally spaced energies computed in decimal, so grid points such
    as 0.25 are hit exactly."""
    try:
        a, b = Decimal(str(k_min)), Decimal(str(k_max))
    except InvalidOperation as exc:
        raise click.BadParameter(f"not a decimal energy: {exc}") from None
    if steps < 1 or not b > a:
        raise click.BadParameter("need k-max > k-min and steps >= 1")
    h = (b - a) / steps
    return [float(a + i * h) for i in range(steps + 1)]


class DecimalEnergy(click.ParamType):
    name = "energy"

    def convert(self, value, param, ctx):
        if isinstance(value, float):
            return value
        try:
            v = float(Decimal(str(value)))
        except InvalidOperation:
            self.fail(f"{value!r} is not a decimal number", param, ctx)
        if not v > 0:
            self.fail("energy must be positive", param, ctx)
        return v


ENERGY = DecimalEnergy()


def _system(name: str, dim: int):
    try:
        return systems.make_system(name, dim)
    except (ValueError, DimensionMismatch) as exc:
        raise click.BadParameter(str(exc), param_hint="--dim") from None


def shell_state(system, k: float, C: float | None = None, seed: int = 0) -> PhaseState:
    """A state on the level H = k.  For the three-dimensional groups ``C`` fixes
    the vertical momentum; otherwise the momentum direction is drawn from
    ``seed``."""
    d = system.dim
    fam = system.family
    q = np.zeros(d)
    if fam is Family.PSL2:
        q[1] = 1.0
    if C is not None and fam in (Family.HEISENBERG, Family.PSL2):
        rest = 2 * k - C * C
        if rest < 0:
            raise PreconditionFailed(f"vertical momentum {C} does not fit on the level {k}")
        return PhaseState(q, np.array([math.sqrt(rest), 0.0, C]))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(d)
    G = system.metric
    return PhaseState(q, x * math.sqrt(2 * k / (x @ G @ x)))


def common(f):
    f = click.option("--out", type=click.Path(dir_okay=False, writable=True), default=None,
                     help="Write to a file instead of stdout.")(f)
    f = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json", show_default=True)(f)
    f = click.option("--selftest", is_flag=True, help="Run the built-in checks for this command and exit.")(f)
    return f


def system_options(f):
    f = click.option("--dim", type=int, default=2, show_default=True, help="Torus dimension.")(f)
    f = click.option("--system", "system_name", type=click.Choice(SYSTEMS), default=None)(f)
    return f


def _need(value, flag):
    if value is None:
        raise click.UsageError(f"missing option {flag}")
    return value


# -- self tests ------------------------------------------------------------------

def _selftest(name: str, checks) -> None:
    failed = 0
    for label, fn in checks:
        try:
            ok = bool(fn())
        except Exception as exc:  # noqa: BLE001 - report and continue
            ok, label = False, f"{label} ({type(exc).__name__}: {exc})"
        failed += not ok
        click.echo(f"{'PASS' if ok else 'FAIL'} {name}: {label}")
    if failed:
        raise VerificationFailure(f"{failed} self-test check(s) failed")


def _raises(exc, fn):
    try:
        fn()
    except exc:
        return True
    return False


def _flow_checks():
    H = systems.make_system("heisenberg")
    s = PhaseState(np.array([0.1, 0.2, 0.3]), np.array([0.5, 0.0, -0.5]))
    return [
        ("zero time returns the start", lambda: np.array_equal(integrate.integrate(s, 0.0, 1e-3, H).states[0], s.z)),
        ("closed form at t=0 is the identity", lambda: np.allclose(systems.closed_form_flow(s, 0.0, H).z, s.z)),
        ("rest state stays put", lambda: np.allclose(
            integrate.integrate(PhaseState(np.zeros(3), np.zeros(3)), 1.0, 0.1, H).final.z, 0.0)),
    ]


def _orbit_checks():
    H = systems.make_system("heisenberg")
    return [
        ("no orbits on the level 1/2", lambda: dynamics.contractible_orbits(H, 0.5) == []),
        ("parabolic boundary classified", lambda: dynamics.classify_psl2(-0.5, 0.5) is dynamics.OrbitType.PARABOLIC),
    ]


def _mane_checks():
    return [
        ("zero-radius circle has zero action", lambda: mane.circle_family_action(0.3, 0.0) == 0.0),
        ("delta bounds c by 1/4", lambda: abs(mane.primitive_upper_bound(
            systems.make_system("psl2"), "delta_psl2") - 0.25) < 1e-12),
    ]


def _contact_checks():
    P = systems.make_system("psl2")
    return [
        ("level 1/2 is the boundary", lambda: stability.contact_diagnostic(P, 0.5).verdict is stability.Verdict.BOUNDARY),
        ("psi pairing is 2k", lambda: stability.contact_diagnostic(P, 0.7).liouville_pairing == 1.4),
    ]


def _stability_checks():
    H = systems.make_system("heisenberg")
    return [
        ("no stabilizing profile at 1/2", lambda: _raises(NotStable, lambda: stability.build_profiles(H, 0.5))),
    ] + _contact_checks()


def _lyapunov_checks():
    H = systems.make_system("heisenberg")
    s = PhaseState(np.zeros(3), np.array([0.5, 0.0, -0.5]))
    return [("tangent flow at t=0 is the identity",
             lambda: np.array_equal(integrate.tangent_flow(s, 0.0, 1e-2, H).matrix, np.eye(6)))]


def _displace_checks():
    P = systems.make_system("psl2")
    return [("psl2 probe refuses k >= 1/4",
             lambda: _raises(PreconditionFailed, lambda: dynamics.displacement_probe(P, 0.3)))]


def _rabinowitz_checks():
    T = systems.make_system("torus", 2)
    on = rabinowitz.DiscreteLoop.constant(np.zeros(2), np.array([1.0, 0.0]), 16, 0.5)
    off = rabinowitz.DiscreteLoop.constant(np.zeros(2), np.zeros(2), 16, 0.5, eta=2.0)
    return [
        ("constant on-shell loop has zero action", lambda: rabinowitz.action(on, T) == 0.0),
        ("constant off-shell loop has action -eta*h", lambda: abs(rabinowitz.action(off, T) + 2.0 * -0.5) < 1e-15),
        ("constant on-shell loop with eta=0 is critical", lambda: rabinowitz.gradient(on, T).norm() < 1e-12),
    ]


def _sweep_checks():
    return [
        ("empty csv is header only", lambda: emit([], "csv", SWEEP_COLUMNS["entropy"]) == b"k,no_hyperbolic,margin\n"),
        ("grid hits 0.25 exactly", lambda: 0.25 in energy_grid("0.05", "0.5", 90)),
    ]


# -- commands --------------------------------------------------------------------

@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Magnetic flows on twisted cotangent bundles of homogeneous spaces."""


@cli.command()
@system_options
@click.option("--energy", type=ENERGY, default=None)
@click.option("--casimir", "C", type=float, default=None, help="Vertical momentum of the start (3-d groups).")
@click.option("--t-max", type=float, default=10.0, show_default=True)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--record-every", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@common
def flow(system_name, dim, energy, C, t_max, dt, record_every, seed, selftest, fmt, out):
    """Integrate the flow with RK4 and report invariant drift."""
    if selftest:
        return _selftest("flow", _flow_checks())
    system = _system(_need(system_name, "--system"), dim)
    s = shell_state(system, _need(energy, "--energy"), C, seed)
    traj = integrate.integrate(s, t_max, dt, system, record_every=record_every)
    if fmt == "csv":
        return _write(traj.to_csv(system).encode(), out)
    rep = integrate.invariant_report(traj, system)
    d = system.dim
    data = {"system": system.name, "k": energy, "dt": traj.dt, "refined_steps": traj.refined_steps,
            "times": traj.times.tolist(), "q": traj.states[:, :d].tolist(), "p": traj.states[:, d:].tolist(),
            "invariants": rep.as_dict()}
    _write(emit([data], "json"), out)


@cli.command()
@system_options
@click.option("--energy", type=ENERGY, default=None)
@click.option("--l-max", type=click.IntRange(1), default=5, show_default=True)
@common
def orbits(system_name, dim, energy, l_max, selftest, fmt, out):
    """Closed contractible orbits on one energy level."""
    if selftest:
        return _selftest("orbits", _orbit_checks())
    system = _system(_need(system_name, "--system"), dim)
    recs = dynamics.contractible_orbits(system, _need(energy, "--energy"), l_max=l_max)
    rows = [{**r.to_json(), "period": r.period} for r in recs]
    _write(emit(rows, fmt, ORBIT_COLUMNS), out)


@cli.command("mane")
@system_options
@click.option("--method", type=click.Choice(["circle-family", "primitive"]), default="circle-family",
              show_default=True)
@click.option("--family", type=click.Choice([f.value for f in mane.CurveFamily]), default=None)
@click.option("--form", default=None, help="Primitive for --method primitive.")
@click.option("--tol", type=float, default=1e-3, show_default=True)
@click.option("--k-lo", type=ENERGY, default=1e-3, show_default=True)
@click.option("--k-hi", type=ENERGY, default=10.0, show_default=True)
@common
def mane_cmd(system_name, dim, method, family, form, tol, k_lo, k_hi, selftest, fmt, out):
    """Bracket the critical values c and c0."""
    if selftest:
        return _selftest("mane", _mane_checks())
    system = _system(_need(system_name, "--system"), dim)
    if method == "primitive":
        form = _need(form, "--form")
        row = {"system": system.name, "form": form, "upper_bound": mane.primitive_upper_bound(system, form)}
        return _write(emit([row], fmt, ["system", "form", "upper_bound"]), out)
    if system.family not in mane.DEFAULT_FAMILY:
        raise Unsupported(f"no curve family for {system.family.value}")
    est = mane.critical_value_bisection(system, family, k_lo, k_hi, tol)
    data = est.to_json()
    if fmt == "json":
        return _write((json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n").encode(), out)
    _write(emit([data], "csv", list(data.keys())), out)


@cli.command()
@system_options
@click.option("--energy", type=ENERGY, default=None)
@click.option("--grid", type=click.IntRange(8), default=256, show_default=True, help="Sample points on the level.")
@click.option("--seed", type=int, default=1, show_default=True)
@common
def stability_cmd(system_name, dim, energy, grid, seed, selftest, fmt, out):
    """Build and verify a stabilizing form."""
    if selftest:
        return _selftest("stability", _stability_checks())
    system = _system(_need(system_name, "--system"), dim)
    recipe = stability.build_profiles(system, _need(energy, "--energy"))
    rep = stability.verify_stabilizing(recipe, samples=grid, rng=np.random.default_rng(seed))
    data = {**recipe.summary(), **{f"check_{k}": v for k, v in rep.as_dict().items()}}
    _write(emit([data], fmt, list(data.keys())), out)


stability_cmd.name = "stability"


@cli.command()
@system_options
@click.option("--energy", type=ENERGY, default=None)
@click.option("--tau", type=float, default=1.0, show_default=True)
@common
def contact(system_name, dim, energy, tau, selftest, fmt, out):
    """Contact-type diagnostic on one level."""
    if selftest:
        return _selftest("contact", _contact_checks())
    system = _system(_need(system_name, "--system"), dim)
    k = _need(energy, "--energy")
    data = {"system": system.name, "k": k, **stability.contact_diagnostic(system, k, tau).as_dict()}
    _write(emit([data], fmt, list(data.keys())), out)


@cli.command()
@system_options
@click.option("--energy", type=ENERGY, default=None)
@click.option("--casimir", "C", type=float, default=None)
@click.option("--t-max", type=float, default=200.0, show_default=True)
@click.option("--dt", type=float, default=1e-2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@common
def lyapunov(system_name, dim, energy, C, t_max, dt, seed, selftest, fmt, out):
    """Top Lyapunov exponent of one trajectory."""
    if selftest:
        return _selftest("lyapunov", _lyapunov_checks())
    system = _system(_need(system_name, "--system"), dim)
    k = _need(energy, "--energy")
    est = dynamics.lyapunov_exponent(system, shell_state(system, k, C, seed), t_max, dt)
    data = {"system": system.name, "k": k, "C": C, **est.__dict__}
    _write(emit([data], fmt, list(data.keys())), out)


@cli.command()
@system_options
@click.option("--energy", type=ENERGY, default=None)
@click.option("--samples", type=click.IntRange(4), default=64, show_default=True)
@common
def displace(system_name, dim, energy, samples, selftest, fmt, out):
    """Displacement certificate for a linear momentum probe."""
    if selftest:
        return _selftest("displace", _displace_checks())
    system = _system(_need(system_name, "--system"), dim)
    data = dynamics.displacement_probe(system, _need(energy, "--energy"), samples).to_json()
    _write(emit([data], fmt, list(data.keys())), out)


def _critical_row(args):
    rec, system, n, noise, reverse, seed = args
    loop = rabinowitz.orbit_seed(rec, system, n, noise, reverse, np.random.default_rng(seed))
    try:
        res = rabinowitz.find_critical(loop, system)
    except MagshellError as exc:
        return {"seed": seed, "status": "failed", "reason": str(exc)}
    return {"seed": seed, "status": "converged", **res.summary()}


@cli.command("rabinowitz")
@system_options
@click.option("--energy", type=ENERGY, default=None)
@click.option("--points", type=click.IntRange(rabinowitz.MIN_NODES), default=64, show_default=True)
@click.option("--seeds", type=click.IntRange(1), default=4, show_default=True)
@click.option("--noise", type=float, default=1e-2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@common
def rabinowitz_cmd(system_name, dim, energy, points, seeds, noise, seed, selftest, fmt, out):
    """Critical points of the discrete action functional, seeded from perturbed
    closed orbits (alternating orientation)."""
    if selftest:
        return _selftest("rabinowitz", _rabinowitz_checks())
    system = _system(_need(system_name, "--system"), dim)
    recs = [r for r in dynamics.contractible_orbits(system, _need(energy, "--energy"), l_max=1)]
    if not recs:
        raise PreconditionFailed("no closed orbit to seed from on this level")
    jobs = [(recs[i % len(recs)], system, points, noise, bool(i % 2), seed + i) for i in range(seeds)]
    rows = parallel_map(_critical_row, jobs)
    cols = ["seed", "status", "eta", "action", "loop_residual", "mean_residual", "iterations", "nodes", "matched"]
    _write(emit(rows, fmt, cols), out)
    if not any(r["status"] == "converged" for r in rows):
        raise NoConvergence("no seed converged")


def _sweep_row(what, system, l_max):
    def row(k):
        if what == "entropy":
            return {"k": k, "no_hyperbolic": dynamics.entropy_threshold(k), "margin": dynamics.entropy_margin(k)}
        if what == "orbits":
            recs = [r for r in dynamics.contractible_orbits(system, k, l_max=l_max) if r.l == 1]
            first = recs[0] if recs else None
            return {"k": k, "count": len(recs), "C": getattr(first, "C", None), "T": getattr(first, "T", None),
                    "omega": getattr(first, "omega", None)}
        if what == "contact":
            dg = stability.contact_diagnostic(system, k)
            return {"k": k, "verdict": dg.verdict.value, "margin": dg.margin}
        try:
            c = dynamics.displacement_probe(system, k)
        except PreconditionFailed:
            return {"k": k, "exit_time": None, "observed_exit": None}
        return {"k": k, "exit_time": c.exit_time, "observed_exit": c.observed_exit}
    return row


@cli.command()
@system_options
@click.option("--what", type=click.Choice(list(SWEEP_COLUMNS)), default=None)
@click.option("--k-min", default=None, help="Decimal lower end of the energy grid.")
@click.option("--k-max", default=None, help="Decimal upper end of the energy grid.")
@click.option("--steps", type=click.IntRange(1), default=None, help="Number of grid intervals.")
@click.option("--l-max", type=click.IntRange(1), default=1, show_default=True)
@common
def sweep(system_name, dim, what, k_min, k_max, steps, l_max, selftest, fmt, out):
    """One quantity over an energy grid (plot-ready)."""
    if selftest:
        return _selftest("sweep", _sweep_checks())
    system = _system(_need(system_name, "--system"), dim)
    what = _need(what, "--what")
    if what == "entropy" and system.family is not Family.PSL2:
        raise click.BadParameter("the entropy sweep is defined for psl2", param_hint="--what")
    grid = energy_grid(_need(k_min, "--k-min"), _need(k_max, "--k-max"), _need(steps, "--steps"))
    rows = parallel_map(_sweep_row(what, system, l_max), grid)
    _write(emit(rows, fmt, SWEEP_COLUMNS[what]), out)


# -- run configs -------------------------------------------------------------------

CONFIG_KEYS = {
    "command": str, "system": str, "dim": int, "energy": (int, float, str), "energy_grid": dict,
    "params": dict, "format": str, "out": str, "seed": int,
}
GRID_KEYS = {"k_min", "k_max", "steps"}


def config_argv(cfg: dict) -> list[str]:
    """Translate a run configuration into command-line arguments.  Unknown keys
    and wrongly typed values are rejected."""
    if not isinstance(cfg, dict):
        raise click.UsageError("run config must be a JSON object")
    unknown = set(cfg) - set(CONFIG_KEYS)
    if unknown:
        raise click.UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, typ in CONFIG_KEYS.items():
        if key in cfg and (not isinstance(cfg[key], typ) or isinstance(cfg[key], bool)):
            raise click.UsageError(f"config key {key!r} has the wrong type")
    if "command" not in cfg or "system" not in cfg:
        raise click.UsageError("config needs 'command' and 'system'")
    if "energy" in cfg and "energy_grid" in cfg:
        raise click.UsageError("give either 'energy' or 'energy_grid'")
    argv = [cfg["command"], "--system", cfg["system"]]
    if "dim" in cfg:
        argv += ["--dim", str(cfg["dim"])]
    if "energy" in cfg:
        argv += ["--energy", str(cfg["energy"])]
    if "energy_grid" in cfg:
        g = cfg["energy_grid"]
        if set(g) != GRID_KEYS:
            raise click.UsageError(f"energy_grid needs exactly {sorted(GRID_KEYS)}")
        argv += ["--k-min", str(g["k_min"]), "--k-max", str(g["k_max"]), "--steps", str(g["steps"])]
    for name, val in sorted(cfg.get("params", {}).items()):
        argv += [f"--{name.replace('_', '-')}", str(val)]
    if "seed" in cfg:
        argv += ["--seed", str(cfg["seed"])]
    if "format" in cfg:
        argv += ["--format", cfg["format"]]
    if "out" in cfg:
        argv += ["--out", cfg["out"]]
    return argv


@cli.command("run")
@click.argument("config", type=click.File("r"))
def run_cmd(config):
    """Execute a JSON run configuration."""
    try:
        cfg = json.load(config)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"config is not valid JSON: {exc}") from None
    argv = config_argv(cfg)
    if argv[0] == "run" or argv[0] not in cli.commands:
        raise click.UsageError(f"unknown command {argv[0]!r}")
    ctx = click.get_current_context()
    sub = cli.commands[argv[0]]
    with sub.make_context(argv[0], argv[1:], parent=ctx.parent) as sctx:
        sub.invoke(sctx)


# -- entry point -------------------------------------------------------------------

USAGE_ERRORS = (PreconditionFailed, Unsupported, InvalidForm, DimensionMismatch)
VERIFY_ERRORS = (VerificationFailure, NotStable, NoConvergence)


def dispatch(argv=None) -> int:
    """Run the CLI and map failures to exit codes."""
    try:
        cli.main(args=argv, prog_name="magshell", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except USAGE_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except VERIFY_ERRORS as exc:
        click.echo(f"verification failed: {exc}", err=True)
        worst = getattr(exc, "worst", None)
        if worst is not None:
            click.echo(f"worst point: {_jsonable(worst)}", err=True)
        return EXIT_VERIFY
    except MagshellError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VERIFY
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return 0


def main() -> None:
    sys.exit(dispatch())
