"""Network equations: dynamic branch KVL and bus KCL in the common frame.

Sign conventions: a dynamic branch current flows from its ``from`` bus to
its ``to`` bus; bus injections are positive into the network.
"""
from dataclasses import dataclass

import numpy as np

from .system import build_admittance, count_islands


@dataclass(frozen=True)
class DynamicBranch:
    name: str
    k_from: int
    k_to: int
    r: float
    l: float
    b: float


def dynamic_branch_derivatives(branch, i_d, i_q, v_from, v_to, omega_sys, omega_b):
    """di/dt from (L/Omega_b) di/dt = dv - (R + j omega_sys L) i."""
    wl = omega_sys * branch.l
    k = omega_b / branch.l
    e_d, e_q = kvl_residual(branch.r, wl, i_d, i_q, v_from, v_to)
    return k * e_d, k * e_q


def kvl_residual(r, wl, i_d, i_q, v_from, v_to):
    return (v_from[0] - v_to[0] - (r * i_d - wl * i_q),
            v_from[1] - v_to[1] - (wl * i_d + r * i_q))


class NetworkModel:
    """Y_a, dynamic branches and lumped bus capacitances of a system.

    ``force_algebraic`` names bus numbers whose voltage must stay algebraic
    (buses held by an ideal voltage source).
    """

    def __init__(self, system, all_lines_dynamic=False, force_algebraic=()):
        self.system = system
        self.all_lines_dynamic = all_lines_dynamic
        self.bus_numbers = tuple(b.number for b in system.buses)
        self.n_bus = len(self.bus_numbers)
        self.force_algebraic = frozenset(force_algebraic)
        self.out_of_service = set()
        idx = system.bus_index()
        self.dynamic = []
        for br in system.branches:
            if all_lines_dynamic or br.model == "dynamic":
                self.dynamic.append(DynamicBranch(br.name, idx[br.from_bus], idx[br.to_bus],
                                                  br.r, br.x, br.b))
        self.dynamic_names = frozenset(d.name for d in self.dynamic)
        self.restamp()

    # -- assembly ------------------------------------------------------------
    def restamp(self):
        """Rebuild Y_a, its row lists and C_lump for the in-service branches."""
        self.Y_a = build_admittance(self.system, self.dynamic_names, self.out_of_service)
        Y = self.Y_a
        rows = []
        for k in range(self.n_bus):
            lo, hi = Y.indptr[k], Y.indptr[k + 1]
            rows.append([(int(j), float(y.real), float(y.imag))
                         for j, y in zip(Y.indices[lo:hi], Y.data[lo:hi]) if y != 0])
        self._rows = rows
        c = np.array([b.shunt_c_lump for b in self.system.buses], dtype=float)
        if self.all_lines_dynamic:
            c += np.array([b.shunt_b for b in self.system.buses])
        for d in self.dynamic:
            if d.name not in self.out_of_service:
                c[d.k_from] += 0.5 * d.b
                c[d.k_to] += 0.5 * d.b
        for k, n in enumerate(self.bus_numbers):
            if n in self.force_algebraic:
                c[k] = 0.0
        self.c_lump = c

    @property
    def y_a(self):
        return self.Y_a

    @property
    def incidence(self):
        """E_l: one row per dynamic branch, +1 at from and -1 at to."""
        E = np.zeros((len(self.dynamic), self.n_bus))
        for r, d in enumerate(self.dynamic):
            E[r, d.k_from] = 1.0
            E[r, d.k_to] = -1.0
        return E

    def capacitive(self, k):
        return self.c_lump[k] > 0

    def trip(self, name):
        if name not in {br.name for br in self.system.branches}:
            raise KeyError(f"unknown branch '{name}'")
        self.out_of_service.add(name)
        self.restamp()

    def islands(self):
        return count_islands(self.system, self.out_of_service)

    def in_service(self, name):
        return name not in self.out_of_service

    # -- evaluation ------------------------------------------------------------
    def kcl(self, v, inj, out, o):
        """out[o + 2k : o + 2k + 2] = inj_k - (Y_a v)_k for every bus k.

        ``v`` and ``inj`` are flat [d0, q0, d1, q1, ...] sequences.
        """
        for k, row in enumerate(self._rows):
            a = inj[2 * k]
            b = inj[2 * k + 1]
            for j, g, s in row:
                vd, vq = v[2 * j], v[2 * j + 1]
                a = a - (g * vd - s * vq)
                b = b - (s * vd + g * vq)
            out[o + 2 * k] = a
            out[o + 2 * k + 1] = b


def bus_kcl(network, v, inj, omega_sys=1.0, omega_b=None):
    """Per-bus KCL: algebraic residual on QSP buses, dv/dt on capacitive ones."""
    if omega_b is None:
        omega_b = network.system.omega_b
    out = [0.0] * (2 * network.n_bus)
    network.kcl(list(v), list(inj), out, 0)
    for k in range(network.n_bus):
        if network.capacitive(k):
            scale = omega_b / network.c_lump[k]
            out[2 * k] *= scale
            out[2 * k + 1] *= scale
    return np.array(out, dtype=float)


def qsp_limit_check(network):
    """True when the network contributes only algebraic equations."""
    return not network.dynamic and not np.any(network.c_lump > 0)
