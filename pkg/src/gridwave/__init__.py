"""Power system dynamics with inverter-based resources: DAE formulations,
component metamodels, QSP and dq-EMT networks, implicit solvers and
small-signal analysis."""
from .cases import load_case
from .linearization import eigenanalysis, linearize, reduce_jacobian, small_signal
from .powerflow import solve_powerflow
from .simulation import (BranchTrip, ControlReferenceChange, GeneratorTrip, LoadStep,
                         apply_perturbation, build_simulation, eval_mass_matrix_rhs,
                         eval_residual, initialize_simulation)
from .system import build_admittance, load_system, validate_system

__version__ = "0.1.0"
