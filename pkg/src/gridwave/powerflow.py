"""Full-Newton AC power flow in polar coordinates.

Static loads of every kind are treated as constant P + jQ at the solution
(the ZIP anchors are defined from this point, so they draw exactly that).
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, SingularJacobian
from .system import build_admittance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_numbers: tuple
    vm: np.ndarray
    va: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int
    mismatch: float

    @property
    def V(self):
        return self.vm * np.exp(1j * self.va)

    def voltage(self, bus):
        k = self.bus_numbers.index(bus)
        return complex(self.V[k])

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "mismatch": self.mismatch,
            "buses": [
                {"bus": int(n), "vm": float(m), "va": float(a), "p": float(p), "q": float(q)}
                for n, m, a, p, q in zip(self.bus_numbers, self.vm, self.va, self.p, self.q)
            ],
        }


def scheduled_injections(system):
    """Specified net complex injection per bus (devices minus loads)."""
    idx = system.bus_index()
    S = np.zeros(len(system.buses), dtype=complex)
    for dev in system.devices:
        S[idx[dev.bus]] += complex(dev.p, dev.q)
    for ld in system.loads:
        S[idx[ld.bus]] -= complex(ld.p, ld.q)
    return S


def _dS(Y, V):
    """dS/dVa and dS/dVm of S = V conj(Y V), dense."""
    I = Y @ V
    dV = np.diag(V)
    dVn = np.diag(V / np.abs(V))
    dS_dva = 1j * dV @ np.conj(np.diag(I) - Y @ dV)
    dS_dvm = dV @ np.conj(Y @ dVn) + np.conj(np.diag(I)) @ dVn
    return dS_dva, dS_dvm


def solve_powerflow(system, tol=1e-9, max_iter=30):
    kinds = [b.kind for b in system.buses]
    if kinds.count("reference") != 1:
        raise ValueError("power flow needs exactly one reference bus")
    Y = build_admittance(system).toarray()
    n = len(system.buses)
    S_spec = scheduled_injections(system)

    pv = [k for k, t in enumerate(kinds) if t == "PV"]
    pq = [k for k, t in enumerate(kinds) if t == "PQ"]
    pvpq = sorted(pv + pq)

    vm = np.ones(n)
    va = np.zeros(n)
    for k, b in enumerate(system.buses):
        if b.kind in ("reference", "PV"):
            vm[k] = b.voltage

    def mismatch(V):
        S = V * np.conj(Y @ V)
        d = S - S_spec
        return np.concatenate([d.real[pvpq], d.imag[pq]]), S

    V = vm * np.exp(1j * va)
    F, S = mismatch(V)
    err = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while err > tol:
        if it >= max_iter:
            raise NonConvergence(f"power flow did not converge in {max_iter} iterations "
                                 f"(mismatch {err:.3g})", it, err, V)
        dva, dvm = _dS(Y, V)
        J = np.block([
            [dva[np.ix_(pvpq, pvpq)].real, dvm[np.ix_(pvpq, pq)].real],
            [dva[np.ix_(pq, pvpq)].imag, dvm[np.ix_(pq, pq)].imag],
        ])
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
            raise SingularJacobian(f"power-flow Jacobian singular at iteration {it} "
                                   "(islanded or degenerate network)")
        dx = np.linalg.solve(J, -F)
        na = len(pvpq)
        va[pvpq] += dx[:na]
        vm[pq] += dx[na:]
        V = vm * np.exp(1j * va)
        it += 1
        F, S = mismatch(V)
        err = float(np.max(np.abs(F)))
        log.debug("power flow iteration %d mismatch %.3e", it, err)
        if not np.isfinite(err) or err > 1e12 or np.min(vm) < 1e-4:
            raise NonConvergence(f"power flow diverged at iteration {it}", it, err, V)
    S = V * np.conj(Y @ V)
    return PowerFlowSolution(tuple(b.number for b in system.buses), np.abs(V), np.angle(V),
                             S.real.copy(), S.imag.copy(), it, err)


def device_dispatch(system, sol):
    """Complex power each dynamic device injects at the power-flow point.

    PQ-bus devices keep their setpoints; on PV buses the devices keep their
    P and share the bus Q equally; on the reference bus P and Q are shared.
    """
    idx = system.bus_index()
    load = np.zeros(len(system.buses), dtype=complex)
    for ld in system.loads:
        load[idx[ld.bus]] += complex(ld.p, ld.q)
    by_bus = {}
    for dev in system.devices:
        by_bus.setdefault(dev.bus, []).append(dev)
    out = {}
    for bus, devs in by_bus.items():
        k = idx[bus]
        total = complex(sol.p[k], sol.q[k]) + load[k]
        kind = system.buses[k].kind
        if kind == "PQ":
            for d in devs:
                out[d.name] = complex(d.p, d.q)
        elif kind == "PV":
            q_share = total.imag / len(devs)
            for d in devs:
                out[d.name] = complex(d.p, q_share)
        else:
            for d in devs:
                out[d.name] = total / len(devs)
    return out
