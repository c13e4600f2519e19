"""Voltage source behind an impedance (an infinite bus when r = x = 0).

The source current is carried as two algebraic states so the ideal case
stays well posed in the current-injection network.
"""
from dataclasses import dataclass, replace

from .generator import DeviceInit


@dataclass(frozen=True)
class SourceDevice:
    r_th: float = 0.0
    x_th: float = 0.0

    @property
    def ideal(self):
        return self.r_th == 0 and self.x_th == 0

    def to_system_base(self, ratio):
        return replace(self, r_th=self.r_th * ratio, x_th=self.x_th * ratio)


class SourceModel:
    kind = "source"
    inner_names = ()
    ref_names = ("v_r", "v_i")

    def __init__(self, name, bus, spec):
        self.name = name
        self.bus = bus
        self.spec = spec
        self.components = [("source", ("i_r", "i_i"))]
        self.offsets = {"source": 0}
        self.n_states = 2
        self.mass = [0.0, 0.0]

    def evaluate(self, x, s, vr, vi, refs, f, cache, c, omega_sys, omega_b):
        ir, ii = x[s], x[s + 1]
        r, xs = self.spec.r_th, self.spec.x_th
        f[s] = refs["v_r"] - vr - (r * ir - xs * ii)
        f[s + 1] = refs["v_i"] - vi - (xs * ir + r * ii)
        return ir, ii

    def initialize(self, P, Q, V):
        V = complex(V)
        I = (complex(P, Q) / V).conjugate()
        E = V + complex(self.spec.r_th, self.spec.x_th) * I
        return DeviceInit([I.real, I.imag], {"v_r": E.real, "v_i": E.imag})
