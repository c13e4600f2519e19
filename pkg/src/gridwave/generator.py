"""Synchronous generator metamodel: machine, shaft, AVR, PSS, governor.

Machine dq convention: the q axis carries the internal EMF and sits at
angle ``delta`` in the network frame, so the machine frame is the network
frame rotated by ``delta - pi/2``. Stator currents are generator-convention
(positive out of the machine).
"""
import cmath
import math
from dataclasses import dataclass, field, replace
from typing import Union

from . import numeric as nm
from ._parse import build, pick_kind
from .errors import InitializationFailure, ParseError, SingularStator
from .frames import device_to_network, network_to_device


# --- component data ----------------------------------------------------------

@dataclass(frozen=True)
class Classical:
    """Constant EMF behind transient reactance; the EMF is the field port."""
    r_a: float = 0.0
    xd_p: float = 0.3

    n_states = 0
    state_names = ()


@dataclass(frozen=True)
class OneDOneQ:
    r_a: float
    x_d: float
    x_q: float
    xd_p: float
    xq_p: float
    Td0_p: float
    Tq0_p: float

    n_states = 2
    state_names = ("eq_p", "ed_p")


@dataclass(frozen=True)
class SingleMass:
    H: float
    D: float = 0.0

    n_states = 2
    state_names = ("delta", "omega")


@dataclass(frozen=True)
class FixedAVR:
    v_f: float = 1.0

    n_states = 0
    state_names = ()


@dataclass(frozen=True)
class SEXS:
    Ta: float
    Tb: float
    K: float
    Te: float
    E_min: float
    E_max: float

    n_states = 2
    state_names = ("vr1", "vf")


@dataclass(frozen=True)
class PassThroughPSS:
    n_states = 0
    state_names = ()


@dataclass(frozen=True)
class FixedTorque:
    tau_m: float = 1.0

    n_states = 0
    state_names = ()


@dataclass(frozen=True)
class TGOV1:
    R: float
    T1: float
    T2: float
    T3: float
    V_min: float
    V_max: float
    D_t: float = 0.0

    n_states = 2
    state_names = ("x1", "x2")


Machine = Union[Classical, OneDOneQ]
AVR = Union[FixedAVR, SEXS]
Governor = Union[FixedTorque, TGOV1]


@dataclass(frozen=True)
class GeneratorDevice:
    machine: Machine
    shaft: SingleMass
    avr: AVR = field(default_factory=FixedAVR)
    governor: Governor = field(default_factory=FixedTorque)
    pss: PassThroughPSS = field(default_factory=PassThroughPSS)

    def slots(self):
        return (("machine", self.machine), ("shaft", self.shaft), ("avr", self.avr),
                ("pss", self.pss), ("governor", self.governor))

    def to_system_base(self, ratio):
        """Rescale from device base; ``ratio`` = S_system / S_device."""
        m = self.machine
        if isinstance(m, Classical):
            m = replace(m, r_a=m.r_a * ratio, xd_p=m.xd_p * ratio)
        else:
            m = replace(m, r_a=m.r_a * ratio, x_d=m.x_d * ratio, x_q=m.x_q * ratio,
                        xd_p=m.xd_p * ratio, xq_p=m.xq_p * ratio)
        shaft = replace(self.shaft, H=self.shaft.H / ratio, D=self.shaft.D / ratio)
        gov = self.governor
        if isinstance(gov, TGOV1):
            gov = replace(gov, R=gov.R * ratio, D_t=gov.D_t / ratio,
                          V_min=gov.V_min / ratio, V_max=gov.V_max / ratio)
        else:
            gov = replace(gov, tau_m=gov.tau_m / ratio)
        return replace(self, machine=m, shaft=shaft, governor=gov)


_MACHINES = {"classical": Classical, "one_d_one_q": OneDOneQ}
_AVRS = {"fixed": FixedAVR, "sexs": SEXS}
_GOVERNORS = {"fixed_torque": FixedTorque, "tgov1": TGOV1}
_PSS = {"none": PassThroughPSS}


def generator_from_dict(data, where):
    allowed = {"machine", "shaft", "avr", "governor", "pss"}
    unknown = set(data) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {sorted(unknown)}")
    for key in ("machine", "shaft"):
        if key not in data:
            raise ParseError(f"{where}: missing required key '{key}'")
    return GeneratorDevice(
        machine=pick_kind(data["machine"], _MACHINES, f"{where}.machine"),
        shaft=build(SingleMass, data["shaft"], f"{where}.shaft"),
        avr=pick_kind(data.get("avr", {"kind": "fixed"}), _AVRS, f"{where}.avr"),
        governor=pick_kind(data.get("governor", {"kind": "fixed_torque"}), _GOVERNORS,
                           f"{where}.governor"),
        pss=pick_kind(data.get("pss", {"kind": "none"}), _PSS, f"{where}.pss"),
    )


# --- component equations -------------------------------------------------------

def machine_stator(machine, states, v_d, v_q, v_f):
    """Stator currents, EMF derivatives and air-gap torque in the machine frame.

    For the classical model ``v_f`` is the internal EMF e'.
    """
    r = machine.r_a
    if isinstance(machine, Classical):
        xd_p = xq_p = machine.xd_p
        ed, eq = 0.0, v_f
    else:
        xd_p, xq_p = machine.xd_p, machine.xq_p
        eq, ed = states[0], states[1]
    det = r * r + xd_p * xq_p
    if det == 0:
        raise SingularStator("stator equations are singular (r_a^2 + xd'*xq' = 0)")
    # [[-r, xq'], [-xd', -r]] @ [i_d, i_q] = [v_d - ed, v_q - eq]
    b1 = v_d - ed
    b2 = v_q - eq
    i_d = (-r * b1 - xq_p * b2) / det
    i_q = (-r * b2 + xd_p * b1) / det
    if isinstance(machine, Classical):
        return (), (i_d, i_q), eq * i_q
    deq = (-eq - (machine.x_d - xd_p) * i_d + v_f) / machine.Td0_p
    ded = (-ed + (machine.x_q - xq_p) * i_q) / machine.Tq0_p
    tau_e = ed * i_d + eq * i_q + (xq_p - xd_p) * i_d * i_q
    return (deq, ded), (i_d, i_q), tau_e


def shaft_dynamics(shaft, delta, omega, tau_m, tau_e, omega_sys, omega_b):
    dw = omega - omega_sys
    return omega_b * dw, (tau_m - tau_e - shaft.D * dw) / (2.0 * shaft.H)


def avr_dynamics(avr, states, v_meas, v_ref):
    if isinstance(avr, FixedAVR):
        return (), avr.v_f
    x1, x2 = states[0], states[1]
    u = v_ref - v_meas
    dx1 = (u - x1) / avr.Tb
    y = x1 + (avr.Ta / avr.Tb) * (u - x1)
    dx2 = (avr.K * y - x2) / avr.Te
    return (dx1, dx2), nm.clamp(x2, avr.E_min, avr.E_max)


def governor_dynamics(gov, states, omega, p_ref):
    if isinstance(gov, FixedTorque):
        return (), gov.tau_m
    x1, x2 = states[0], states[1]
    c = p_ref - (omega - 1.0) / gov.R
    x1c = nm.clamp(x1, gov.V_min, gov.V_max)
    dx1 = nm.antiwindup(x1, (c - x1) / gov.T1, gov.V_min, gov.V_max)
    dx2 = (x1c - x2) / gov.T3
    tau_m = x2 + (gov.T2 / gov.T3) * (x1c - x2) - gov.D_t * (omega - 1.0)
    return (dx1, dx2), tau_m


# --- device model ----------------------------------------------------------------

@dataclass
class DeviceInit:
    states: list
    refs: dict
    info: dict = field(default_factory=dict)


def initialize_generator(device, P, Q, V):
    """Steady state for injection ``P + jQ`` at bus voltage phasor ``V``.

    Returns a :class:`DeviceInit` whose refs hold V_ref, P_ref and the fixed
    port values; ``info['delta']`` is the rotor angle.
    """
    V = complex(V)
    if abs(V) == 0:
        raise InitializationFailure("zero terminal voltage", stage="machine")
    I = (complex(P, Q) / V).conjugate()
    m = device.machine
    if isinstance(m, Classical):
        E = V + complex(m.r_a, m.xd_p) * I
        delta = cmath.phase(E)
        machine_states = []
        v_f = abs(E)
    else:
        EQ = V + complex(m.r_a, m.x_q) * I
        delta = cmath.phase(EQ)
        ang = delta - math.pi / 2
        v_d, v_q = network_to_device(V.real, V.imag, ang)
        i_d, i_q = network_to_device(I.real, I.imag, ang)
        ed = v_d + m.r_a * i_d - m.xq_p * i_q
        eq = v_q + m.r_a * i_q + m.xd_p * i_d
        v_f = eq + (m.x_d - m.xd_p) * i_d
        machine_states = [eq, ed]
    tau_e = P + m.r_a * abs(I) ** 2
    refs = {}

    avr = device.avr
    v_meas = abs(V)
    if isinstance(avr, FixedAVR):
        avr_states = []
        refs["V_f"] = v_f
    else:
        if not (avr.E_min <= v_f <= avr.E_max):
            raise InitializationFailure(
                f"required field voltage {v_f:.6g} outside SEXS limits "
                f"[{avr.E_min}, {avr.E_max}]", stage="avr", residual=v_f)
        u = v_f / avr.K
        avr_states = [u, v_f]
        refs["V_ref"] = v_meas + u

    gov = device.governor
    if isinstance(gov, FixedTorque):
        gov_states = []
        refs["tau_m"] = tau_e
    else:
        if not (gov.V_min <= tau_e <= gov.V_max):
            raise InitializationFailure(
                f"required mechanical torque {tau_e:.6g} outside TGOV1 valve limits",
                stage="governor", residual=tau_e)
        gov_states = [tau_e, tau_e]
        refs["P_ref"] = tau_e

    states = machine_states + [delta, 1.0] + avr_states + gov_states
    return DeviceInit(states, refs, {"delta": delta, "v_f": v_f, "tau_e": tau_e})


class GeneratorModel:
    kind = "generator"
    inner_names = ("i_d", "i_q", "tau_e", "tau_m", "v_f", "v_meas")

    def __init__(self, name, bus, spec):
        self.name = name
        self.bus = bus
        self.spec = spec
        self.components = [(slot, comp.state_names) for slot, comp in spec.slots()]
        offs, k = {}, 0
        for slot, names in self.components:
            offs[slot] = k
            k += len(names)
        self.offsets = offs
        self.n_states = k
        self.mass = [1.0] * k
        self.ref_names = self._ref_names()

    def _ref_names(self):
        names = ["V_f"] if isinstance(self.spec.avr, FixedAVR) else ["V_ref"]
        names.append("tau_m" if isinstance(self.spec.governor, FixedTorque) else "P_ref")
        return tuple(names)

    def evaluate(self, x, s, vr, vi, refs, f, cache, c, omega_sys, omega_b):
        spec, o = self.spec, self.offsets
        m0, sh, av, gv = s + o["machine"], s + o["shaft"], s + o["avr"], s + o["governor"]
        delta, omega = x[sh], x[sh + 1]
        ang = delta - math.pi / 2
        v_d, v_q = network_to_device(vr, vi, ang)
        v_meas = nm.sqrt(vr * vr + vi * vi)

        if isinstance(spec.avr, FixedAVR):
            v_f = refs["V_f"]
        else:
            davr, v_f = avr_dynamics(spec.avr, x[av:av + 2], v_meas, refs["V_ref"])
            f[av], f[av + 1] = davr
        dm, (i_d, i_q), tau_e = machine_stator(spec.machine, x[m0:m0 + 2], v_d, v_q, v_f)
        for k, d in enumerate(dm):
            f[m0 + k] = d
        if isinstance(spec.governor, FixedTorque):
            tau_m = refs["tau_m"]
        else:
            dg, tau_m = governor_dynamics(spec.governor, x[gv:gv + 2], omega, refs["P_ref"])
            f[gv], f[gv + 1] = dg
        f[sh], f[sh + 1] = shaft_dynamics(spec.shaft, delta, omega, tau_m, tau_e,
                                          omega_sys, omega_b)
        cache[c:c + 6] = (i_d, i_q, tau_e, tau_m, v_f, v_meas)
        return device_to_network(i_d, i_q, ang)

    def initialize(self, P, Q, V):
        return initialize_generator(self.spec, P, Q, V)
