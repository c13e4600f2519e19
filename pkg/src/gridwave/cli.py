"""Command-line entry point: ``gridwave validate|powerflow|sim|smallsignal|compare``."""
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors as E
from .linearization import small_signal
from .powerflow import solve_powerflow
from .simulation import build_simulation, initialize_simulation, perturbation_from_dict
from .solvers import METHODS, SolverConfig, integrate
from .svg import spectrum_svg
from .system import load_system, validate_system
from .traces import ResultTrace, compare_summary, format_summary

log = logging.getLogger("gridwave")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_INIT = 4
EXIT_SOLVER = 5
EXIT_SINGULAR_RY = 6
EXIT_SIGNAL = 7

# checked in order, so subclasses must precede their bases
EXIT_CODES = (
    (E.ParseError, EXIT_PARSE),
    (E.BusReferenceError, EXIT_PARSE),
    (E.DuplicateIdError, EXIT_PARSE),
    (E.ValidationError, EXIT_VALIDATION),
    (E.SingularBranchError, EXIT_VALIDATION),
    (E.InitializationFailure, EXIT_INIT),
    (E.SingularStator, EXIT_INIT),
    (E.NonConvergence, EXIT_INIT),
    (E.SingularJacobian, EXIT_INIT),
    (E.SingularRy, EXIT_SINGULAR_RY),
    (E.SignalMismatch, EXIT_SIGNAL),
    (E.SolverError, EXIT_SOLVER),
    (E.NonFiniteJacobianEntry, EXIT_SOLVER),
    (E.EigenSolverFailure, EXIT_SOLVER),
)


def exit_code_for(exc):
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


@dataclass
class RunManifest:
    system: Path
    scenario: Path = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    out: Path = Path(".")
    formats: tuple = ("json",)
    all_lines_dynamic: bool = False

    def __post_init__(self):
        self.system = Path(self.system)
        if not self.system.is_file():
            raise E.ParseError(f"{self.system}: no such system file")
        if self.scenario is not None:
            self.scenario = Path(self.scenario)
            if not self.scenario.is_file():
                raise E.ParseError(f"{self.scenario}: no such scenario file")
        self.out = Path(self.out)
        self.out.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise OSError(f"{self.out}: output directory not writable")


@dataclass
class Scenario:
    tspan: tuple = (0.0, 5.0)
    formulation: str = "residual"
    all_lines_dynamic: bool = False
    perturbations: tuple = ()
    solver: dict = field(default_factory=dict)


def load_scenario(path):
    if path is None:
        return Scenario()
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise E.ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise E.ParseError(f"{path}: scenario must be a JSON object")
    unknown = set(raw) - {"tspan", "formulation", "all_lines_dynamic", "perturbations", "solver"}
    if unknown:
        raise E.ParseError(f"{path}: unknown scenario keys {sorted(unknown)}")
    try:
        perts = tuple(perturbation_from_dict(p) for p in raw.get("perturbations", []))
        tspan = tuple(float(v) for v in raw.get("tspan", (0.0, 5.0)))
    except (TypeError, ValueError, KeyError) as exc:
        raise E.ParseError(f"{path}: {exc}") from None
    if len(tspan) != 2:
        raise E.ParseError(f"{path}: tspan needs two entries")
    return Scenario(tspan, raw.get("formulation", "residual"),
                    bool(raw.get("all_lines_dynamic", False)), perts, dict(raw.get("solver", {})))


def _solver_config(args, overrides):
    kw = dict(overrides)
    for flag, key in (("solver", "method"), ("abstol", "abstol"), ("reltol", "reltol"),
                      ("max_step", "max_step")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    try:
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise E.ParseError(f"bad solver settings: {exc}") from None


def _load_valid(path):
    system = load_system(path)
    report = validate_system(system)
    if not report.ok:
        raise E.ValidationError(report)
    return system


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- subcommands ---------------------------------------------------------------

def cmd_validate(args):
    system = load_system(args.system)
    report = validate_system(system)
    print(report)
    if not report.ok:
        raise E.ValidationError(report)
    return EXIT_OK


def cmd_powerflow(args):
    system = _load_valid(args.system)
    sol = solve_powerflow(system)
    print(f"{'bus':>6}{'vm':>12}{'va (deg)':>12}{'p':>12}{'q':>12}")
    for n, vm, va, p, q in zip(sol.bus_numbers, sol.vm, sol.va, sol.p, sol.q):
        print(f"{n:>6d}{vm:>12.6f}{np.degrees(va):>12.6f}{p:>12.6f}{q:>12.6f}")
    print(f"converged in {sol.iterations} iterations, mismatch {sol.mismatch:.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "powerflow.json", sol.to_dict())
    return EXIT_OK


def _check_targets(system, scen):
    branches = {b.name for b in system.branches}
    devices = {d.name for d in system.devices}
    buses = {b.number for b in system.buses}
    for p in scen.perturbations:
        bad = ((p.kind == "branch_trip" and p.branch not in branches)
               or (p.kind in ("generator_trip", "reference_change") and p.device not in devices)
               or (p.kind == "load_step" and p.bus not in buses))
        if bad:
            raise E.ParseError(f"scenario: {p.describe()} targets an unknown element")
        if not scen.tspan[0] <= p.time <= scen.tspan[1]:
            raise E.ParseError(f"scenario: {p.describe()} lies outside tspan")


def _prepare(args):
    manifest = RunManifest(args.system, args.scenario, out=args.out or ".")
    scen = load_scenario(manifest.scenario)
    manifest.solver = _solver_config(args, scen.solver)
    manifest.all_lines_dynamic = scen.all_lines_dynamic or args.all_lines_dynamic
    system = _load_valid(manifest.system)
    _check_targets(system, scen)
    inputs = build_simulation(system, scen.formulation, manifest.all_lines_dynamic)
    x0 = initialize_simulation(inputs)
    log.info("initialized %d states (%d algebraic)", inputs.n, int(np.sum(inputs.mass == 0)))
    return manifest, scen, inputs, x0


def cmd_sim(args):
    manifest, scen, inputs, x0 = _prepare(args)
    trace = integrate(inputs, manifest.solver, scen.tspan, x0, scen.perturbations)
    out = manifest.out
    trace.to_csv(out / "trace.csv")
    trace.write_events(out / "events.json")
    stats = dict(trace.stats)
    stats.update(n_states=inputs.n, n_points=len(trace))
    _dump(out / "stats.json", stats)
    print(f"{len(trace)} points, {stats['steps']} steps, {stats['rejected']} rejected, "
          f"{stats['wall_time_s']:.2f} s")
    return EXIT_OK


def cmd_smallsignal(args):
    manifest, scen, inputs, x0 = _prepare(args)
    _, report = small_signal(inputs, x0)
    _dump(manifest.out / "eigen.json", report.to_dict())
    if args.svg:
        label = "EMT" if manifest.all_lines_dynamic else "QSP"
        (manifest.out / "spectrum.svg").write_text(spectrum_svg({label: report.eigenvalues}))
    print(f"{'#':>4}{'real':>14}{'imag':>14}{'damping %':>12}{'f (Hz)':>10}  dominant")
    for k, (lam, z, f, s) in enumerate(zip(report.eigenvalues, report.damping,
                                           report.frequency, report.dominant), 1):
        print(f"{k:>4d}{lam.real:>14.4f}{lam.imag:>14.4f}{z:>12.2f}{f:>10.4f}  {s}")
    return EXIT_OK


def cmd_compare(args):
    a = ResultTrace.from_csv(args.trace_a)
    b = ResultTrace.from_csv(args.trace_b)
    if set(a.names) != set(b.names):
        diff = sorted(set(a.names) ^ set(b.names))
        raise E.SignalMismatch(f"trace headers differ: {diff[:5]}")
    table = compare_summary(a, b)
    print(format_summary(table))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        clean = {c: {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                     for k, v in row.items()} for c, row in table.items()}
        _dump(out / "compare.json", clean)
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="gridwave", description="Power system DAE simulation")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and check a system file")
    v.add_argument("--system", required=True)
    v.set_defaults(func=cmd_validate)

    pf = sub.add_parser("powerflow", help="solve the power flow")
    pf.add_argument("--system", required=True)
    pf.add_argument("--out")
    pf.set_defaults(func=cmd_powerflow)

    for name, func, helptext in (("sim", cmd_sim, "time-domain simulation"),
                                 ("smallsignal", cmd_smallsignal, "eigenvalue analysis")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--system", required=True)
        s.add_argument("--scenario")
        s.add_argument("--out", default=".")
        s.add_argument("--solver", choices=METHODS)
        s.add_argument("--abstol", type=float)
        s.add_argument("--reltol", type=float)
        s.add_argument("--max-step", dest="max_step", type=float)
        s.add_argument("--all-lines-dynamic", action="store_true")
        if name == "smallsignal":
            s.add_argument("--svg", action="store_true", help="also write spectrum.svg")
        s.set_defaults(func=func)

    c = sub.add_parser("compare", help="RMSE table between two traces")
    c.add_argument("trace_a")
    c.add_argument("trace_b")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    level = os.environ.get("GRIDWAVE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except E.GridwaveError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
