"""Small-signal analysis: Jacobian, algebraic elimination, eigen report."""
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import EigenSolverFailure, SingularRy

RY_CONDITION_LIMIT = 1e12


@dataclass
class LinearizedModel:
    J: object
    mass: np.ndarray
    differential: np.ndarray
    algebraic: np.ndarray
    x_eq: np.ndarray
    names: tuple = ()
    J_red: np.ndarray = None

    @property
    def differential_names(self):
        return tuple(self.names[k] for k in self.differential) if self.names else ()


def system_jacobian(inputs, x):
    return inputs.jacobian(x).copy()


def linearize(inputs, x=None):
    """Jacobian at ``x`` (default: the initialized state) and its partition."""
    if x is None:
        x = inputs.x0
    x = np.asarray(x, dtype=float)
    J = system_jacobian(inputs, x)
    lin = partition(J, inputs.mass, x, tuple(inputs.names))
    lin.J_red = reduce_jacobian(lin)
    return lin


def partition(J, mass, x=None, names=()):
    mass = np.asarray(mass, dtype=float)
    diff = np.flatnonzero(mass != 0)
    alg = np.flatnonzero(mass == 0)
    return LinearizedModel(J, mass, diff, alg, x, names)


def reduce_jacobian(lin):
    """M_d^-1 (S_x - S_y R_y^-1 R_x) for the pencil (J, diag M)."""
    J = lin.J.toarray() if hasattr(lin.J, "toarray") else np.asarray(lin.J, dtype=float)
    d, a = lin.differential, lin.algebraic
    Sx = J[np.ix_(d, d)]
    if a.size:
        Ry = J[np.ix_(a, a)]
        cond = np.linalg.cond(Ry)
        if not np.isfinite(cond) or cond > RY_CONDITION_LIMIT:
            raise SingularRy(f"algebraic Jacobian block is singular (condition {cond:.3g})",
                             condition=cond)
        lu = sla.lu_factor(Ry)
        Sx = Sx - J[np.ix_(d, a)] @ sla.lu_solve(lu, J[np.ix_(a, d)])
    return Sx / lin.mass[d][:, None]


ZERO_EIGENVALUE = 1e-9


def damping_ratio(lam):
    """Damping in percent; real eigenvalues report +-100 (zero counts as damped)."""
    lam = complex(lam)
    if lam.imag == 0:
        return 100.0 if lam.real <= ZERO_EIGENVALUE else -100.0
    return -lam.real / abs(lam) * 100.0


def frequency_hz(lam):
    return abs(complex(lam).imag) / (2.0 * math.pi)


@dataclass
class EigenReport:
    eigenvalues: np.ndarray
    damping: np.ndarray
    frequency: np.ndarray
    dominant: tuple

    def to_dict(self):
        return {"modes": [
            {"real": float(l.real), "imag": float(l.imag), "damping_pct": float(z),
             "frequency_hz": float(f), "dominant_state": s}
            for l, z, f, s in zip(self.eigenvalues, self.damping, self.frequency,
                                  self.dominant)]}

    @property
    def stable(self):
        return bool(np.all(self.eigenvalues.real < 0))


def eigenanalysis(J_red, names=None):
    A = np.asarray(J_red, dtype=float)
    if A.size and not np.all(np.isfinite(A)):
        raise EigenSolverFailure("reduced Jacobian has non-finite entries")
    if A.shape[0] == 0:
        return EigenReport(np.zeros(0, complex), np.zeros(0), np.zeros(0), ())
    try:
        lam, vec = sla.eig(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverFailure(str(exc)) from exc
    order = np.lexsort((-lam.imag, -lam.real))
    lam, vec = lam[order], vec[:, order]
    if names is None:
        names = [f"x{k}" for k in range(A.shape[0])]
    dominant = tuple(names[int(np.argmax(np.abs(vec[:, k])))] for k in range(len(lam)))
    return EigenReport(lam, np.array([damping_ratio(l) for l in lam]),
                       np.array([frequency_hz(l) for l in lam]), dominant)


def small_signal(inputs, x=None):
    lin = linearize(inputs, x)
    return lin, eigenanalysis(lin.J_red, lin.differential_names)
