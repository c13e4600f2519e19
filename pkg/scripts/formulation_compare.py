"""Residual vs mass-matrix trajectories for every shipped case."""
import argparse

from gridwave.cases import CASES, load_case
from gridwave.errors import GridwaveError
from gridwave.linearization import small_signal
from gridwave.simulation import ControlReferenceChange, build_simulation, initialize_simulation
from gridwave.solvers import METHODS, SolverConfig, integrate
from gridwave.traces import rmse_compare

# a reference nudge per case so the trajectories actually move
NUDGE = {"two_bus_machine": ("gen", "P_ref"), "omib": None,
         "three_bus_inverters": ("droop2", "p_ref"), "three_bus_mixed": ("gen1", "P_ref"),
         "three_machine": ("gen1", "P_ref"), "islanded_droop": ("droop1", "p_ref")}


def run(case, form, dyn, method, tend):
    inp = build_simulation(load_case(case), form, dyn)
    x0 = initialize_simulation(inp)
    events = []
    if NUDGE.get(case):
        dev, field = NUDGE[case]
        events.append(ControlReferenceChange(0.1, dev, field,
                                             inp.refs[inp.device(dev)][field] + 0.02))
    cfg = SolverConfig(method=method, abstol=1e-10, reltol=1e-10, max_step=0.01)
    return integrate(inp, cfg, (0.0, tend), x0, events)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--method", choices=METHODS, default="bdf2_adaptive")
    ap.add_argument("--tend", type=float, default=0.5)
    args = ap.parse_args()
    print(f"{'case':<22}{'network':>8}{'max Re(lambda)':>16}{'max RMSE':>12}")
    for case in CASES:
        for dyn in (False, True):
            inp = build_simulation(load_case(case), all_lines_dynamic=dyn)
            initialize_simulation(inp)
            growth = small_signal(inp)[1].eigenvalues.real.max()
            try:
                a = run(case, "residual", dyn, args.method, args.tend)
                b = run(case, "mass_matrix", dyn, args.method, args.tend)
                err = f"{max(rmse_compare(a, b).values()):12.2e}"
            except GridwaveError as exc:
                # e.g. constant-power loads behind purely inductive dynamic lines
                err = f"  {type(exc).__name__}"
            print(f"{case:<22}{'EMT' if dyn else 'QSP':>8}{growth:>16.4g}{err}")


if __name__ == "__main__":
    main()
