"""Inverter metamodel: LCL filter, average converter, DC source, SRF-PLL,
outer loop (VSM / droop / grid-following PQ) and cascaded inner loop.

The filter lives in the common network frame; the control loops work in
the outer-loop frame at angle ``theta_olc``.
"""
import cmath
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from . import numeric as nm
from ._parse import build, pick_kind
from .errors import InitializationFailure, ParseError
from .frames import device_to_network, network_to_device
from .generator import DeviceInit


@dataclass(frozen=True)
class LCLFilter:
    lf: float
    rf: float
    cf: float
    lg: float
    rg: float

    n_states = 6
    state_names = ("icv_d", "icv_q", "vcf_d", "vcf_q", "ig_d", "ig_q")


@dataclass(frozen=True)
class AverageConverter:
    rated_v_dc: float = 1.0
    max_modulation: float = 1.5

    n_states = 0
    state_names = ()


@dataclass(frozen=True)
class FixedDCSource:
    v_dc: float = 1.0

    n_states = 0
    state_names = ()


@dataclass(frozen=True)
class NoFrequencyEstimator:
    n_states = 0
    state_names = ()


@dataclass(frozen=True)
class SRFPLL:
    kp_pll: float
    ki_pll: float

    n_states = 2
    state_names = ("eps", "theta_pll")


@dataclass(frozen=True)
class VSM:
    Ta: float
    kd: float
    k_omega: float
    kq: float
    omega_f: float

    n_states = 4
    state_names = ("theta_olc", "omega_olc", "p_m", "q_m")


@dataclass(frozen=True)
class Droop:
    Rp: float
    omega_z: float
    kq: float
    omega_f: float

    n_states = 3
    state_names = ("theta_olc", "p_m", "q_m")


@dataclass(frozen=True)
class GridFollowingPQ:
    kp_p: float
    ki_p: float
    kp_q: float
    ki_q: float

    n_states = 2
    state_names = ("sigma_p", "sigma_q")


@dataclass(frozen=True)
class VoltageCurrentPI:
    kpv: float
    kiv: float
    kpc: float
    kic: float
    kffv: float = 1.0
    kffi: float = 1.0

    n_states = 4
    state_names = ("xi_d", "xi_q", "gamma_d", "gamma_q")


OuterLoop = Union[VSM, Droop, GridFollowingPQ]


@dataclass(frozen=True)
class InverterDevice:
    filter: LCLFilter
    outer_loop: OuterLoop
    inner_loop: VoltageCurrentPI
    converter: AverageConverter = field(default_factory=AverageConverter)
    dc_source: FixedDCSource = field(default_factory=FixedDCSource)
    freq_estimator: Union[NoFrequencyEstimator, SRFPLL] = field(
        default_factory=NoFrequencyEstimator)

    @property
    def current_mode(self):
        """True when the outer loop hands current references to the inner loop."""
        return isinstance(self.outer_loop, GridFollowingPQ)

    def slots(self):
        inner_names = self.inner_loop.state_names[2:] if self.current_mode \
            else self.inner_loop.state_names
        return (("filter", self.filter.state_names),
                ("converter", ()), ("dc_source", ()),
                ("freq_estimator", self.freq_estimator.state_names),
                ("outer_loop", self.outer_loop.state_names),
                ("inner_loop", inner_names))

    def to_system_base(self, ratio):
        """Rescale from device base; ``ratio`` = S_system / S_device."""
        f = self.filter
        filt = replace(f, lf=f.lf * ratio, rf=f.rf * ratio, cf=f.cf / ratio,
                       lg=f.lg * ratio, rg=f.rg * ratio)
        o = self.outer_loop
        if isinstance(o, VSM):
            o = replace(o, Ta=o.Ta / ratio, kd=o.kd / ratio, k_omega=o.k_omega / ratio,
                        kq=o.kq * ratio)
        elif isinstance(o, Droop):
            o = replace(o, Rp=o.Rp * ratio, kq=o.kq * ratio)
        i = self.inner_loop
        inner = replace(i, kpv=i.kpv / ratio, kiv=i.kiv / ratio,
                        kpc=i.kpc * ratio, kic=i.kic * ratio)
        return replace(self, filter=filt, outer_loop=o, inner_loop=inner)


_OUTER = {"vsm": VSM, "droop": Droop, "grid_following_pq": GridFollowingPQ}
_FREQ = {"none": NoFrequencyEstimator, "srf_pll": SRFPLL}


def inverter_from_dict(data, where):
    allowed = {"filter", "converter", "dc_source", "freq_estimator", "outer_loop",
               "inner_loop"}
    unknown = set(data) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {sorted(unknown)}")
    for key in ("filter", "outer_loop", "inner_loop"):
        if key not in data:
            raise ParseError(f"{where}: missing required key '{key}'")
    return InverterDevice(
        filter=pick_kind(data["filter"], {"lcl": LCLFilter}, f"{where}.filter"),
        outer_loop=pick_kind(data["outer_loop"], _OUTER, f"{where}.outer_loop"),
        inner_loop=pick_kind(data["inner_loop"], {"voltage_current_pi": VoltageCurrentPI},
                             f"{where}.inner_loop"),
        converter=pick_kind(data.get("converter", {"kind": "average"}),
                            {"average": AverageConverter}, f"{where}.converter"),
        dc_source=pick_kind(data.get("dc_source", {"kind": "fixed"}),
                            {"fixed": FixedDCSource}, f"{where}.dc_source"),
        freq_estimator=pick_kind(data.get("freq_estimator", {"kind": "none"}), _FREQ,
                                 f"{where}.freq_estimator"),
    )


# --- component equations -----------------------------------------------------------

def filter_dynamics(filt, i_cv, v_cf, i_g, v_cv, v_grid, omega_sys, omega_b):
    """LCL derivatives in the common frame; J @ (a, b) = (b, -a)."""
    kcv = omega_b / filt.lf
    kcf = omega_b / filt.cf
    kg = omega_b / filt.lg
    wl_f = omega_sys * filt.lf
    wc_f = omega_sys * filt.cf
    wl_g = omega_sys * filt.lg
    return (
        kcv * (v_cv[0] - v_cf[0] - filt.rf * i_cv[0] + wl_f * i_cv[1]),
        kcv * (v_cv[1] - v_cf[1] - filt.rf * i_cv[1] - wl_f * i_cv[0]),
        kcf * (i_cv[0] - i_g[0] + wc_f * v_cf[1]),
        kcf * (i_cv[1] - i_g[1] - wc_f * v_cf[0]),
        kg * (v_cf[0] - v_grid[0] - filt.rg * i_g[0] + wl_g * i_g[1]),
        kg * (v_cf[1] - v_grid[1] - filt.rg * i_g[1] - wl_g * i_g[0]),
    )


def pll_vq(theta, v_d, v_q):
    return -v_d * nm.sin(theta) + v_q * nm.cos(theta)


def pll_dynamics(pll, eps, theta_pll, v_d, v_q, omega_sys, omega_b):
    """Returns (d eps/dt, d theta_pll/dt, omega_pll)."""
    vq = pll_vq(theta_pll, v_d, v_q)
    omega_pll = omega_sys + pll.kp_pll * vq + pll.ki_pll * eps
    return vq, omega_b * (omega_pll - omega_sys), omega_pll


@dataclass
class OuterPorts:
    derivs: tuple
    theta_olc: object
    omega_olc: object
    v_olc_ref: object = None
    i_olc_ref: Optional[tuple] = None


def outer_loop_dynamics(outer, states, p_e, q_e, omega_pll, theta_pll, refs,
                        omega_sys, omega_b):
    p_ref, q_ref = refs["p_ref"], refs["q_ref"]
    if isinstance(outer, VSM):
        theta, omega, p_m, q_m = states[0], states[1], states[2], states[3]
        dtheta = omega_b * (omega - omega_sys)
        domega = (p_ref - p_m - outer.kd * (omega - omega_pll)
                  - outer.k_omega * (omega - refs["omega_ref"])) / outer.Ta
        dp = outer.omega_f * (p_e - p_m)
        dq = outer.omega_f * (q_e - q_m)
        v_olc = refs["v_ref"] + outer.kq * (q_ref - q_m)
        return OuterPorts((dtheta, domega, dp, dq), theta, omega, v_olc)
    if isinstance(outer, Droop):
        theta, p_m, q_m = states[0], states[1], states[2]
        omega = refs["omega_ref"] + outer.Rp * (p_ref - p_m)
        dtheta = omega_b * (omega - omega_sys)
        dp = outer.omega_z * (p_e - p_m)
        dq = outer.omega_f * (q_e - q_m)
        v_olc = refs["v_ref"] + outer.kq * (q_ref - q_m)
        return OuterPorts((dtheta, dp, dq), theta, omega, v_olc)
    sp, sq = states[0], states[1]
    ep = p_ref - p_e
    eq = q_ref - q_e
    i_ref = (outer.kp_p * ep + outer.ki_p * sp, -(outer.kp_q * eq + outer.ki_q * sq))
    return OuterPorts((ep, eq), theta_pll, omega_pll, None, i_ref)


def inner_loop_dynamics(inner, filt, states, ports, i_cv, v_cf, i_g):
    """Cascaded PI in the outer-loop frame; returns (derivs, v_cv_ref network)."""
    th, w = ports.theta_olc, ports.omega_olc
    icd, icq = network_to_device(i_cv[0], i_cv[1], th)
    vcd, vcq = network_to_device(v_cf[0], v_cf[1], th)
    if ports.i_olc_ref is None:
        igd, igq = network_to_device(i_g[0], i_g[1], th)
        xi_d, xi_q, g_d, g_q = states[0], states[1], states[2], states[3]
        ev_d = ports.v_olc_ref - vcd
        ev_q = -vcq
        ir_d = inner.kpv * ev_d + inner.kiv * xi_d + inner.kffi * igd - w * filt.cf * vcq
        ir_q = inner.kpv * ev_q + inner.kiv * xi_q + inner.kffi * igq + w * filt.cf * vcd
        derivs = [ev_d, ev_q]
    else:
        g_d, g_q = states[0], states[1]
        ir_d, ir_q = ports.i_olc_ref
        derivs = []
    ei_d = ir_d - icd
    ei_q = ir_q - icq
    m_d = inner.kpc * ei_d + inner.kic * g_d + inner.kffv * vcd - w * filt.lf * icq
    m_q = inner.kpc * ei_q + inner.kic * g_q + inner.kffv * vcq + w * filt.lf * icd
    derivs += [ei_d, ei_q]
    return tuple(derivs), device_to_network(m_d, m_q, th)


def converter_output(converter, dc_source, v_cv_ref):
    k = dc_source.v_dc / converter.rated_v_dc
    return v_cv_ref[0] * k, v_cv_ref[1] * k


# --- device model -------------------------------------------------------------------

class InverterModel:
    kind = "inverter"
    inner_names = ("p_e", "q_e", "vq_pll", "omega_pll", "theta_olc", "omega_olc",
                   "vcv_d", "vcv_q")
    ref_names = ("p_ref", "q_ref", "v_ref", "omega_ref")

    def __init__(self, name, bus, spec, omega_b=2 * math.pi * 60):
        self.name = name
        self.bus = bus
        self.spec = spec
        self.omega_b = omega_b
        self.components = list(spec.slots())
        offs, k = {}, 0
        for slot, names in self.components:
            offs[slot] = k
            k += len(names)
        self.offsets = offs
        self.n_states = k
        self.mass = [1.0] * k

    def evaluate(self, x, s, vr, vi, refs, f, cache, c, omega_sys, omega_b):
        spec, o = self.spec, self.offsets
        fs = s + o["filter"]
        i_cv = (x[fs], x[fs + 1])
        v_cf = (x[fs + 2], x[fs + 3])
        i_g = (x[fs + 4], x[fs + 5])

        pe = s + o["freq_estimator"]
        if isinstance(spec.freq_estimator, SRFPLL):
            eps, theta_pll = x[pe], x[pe + 1]
            f[pe], f[pe + 1], omega_pll = pll_dynamics(
                spec.freq_estimator, eps, theta_pll, v_cf[0], v_cf[1], omega_sys, omega_b)
            vq_pll = f[pe]
        else:
            theta_pll, omega_pll, vq_pll = 0.0, omega_sys, 0.0

        p_e = v_cf[0] * i_g[0] + v_cf[1] * i_g[1]
        q_e = v_cf[1] * i_g[0] - v_cf[0] * i_g[1]

        ol = s + o["outer_loop"]
        n_ol = len(spec.outer_loop.state_names)
        ports = outer_loop_dynamics(spec.outer_loop, x[ol:ol + n_ol], p_e, q_e, omega_pll,
                                    theta_pll, refs, omega_sys, omega_b)
        f[ol:ol + n_ol] = ports.derivs

        il = s + o["inner_loop"]
        n_il = self.n_states - o["inner_loop"]
        d_inner, v_cv_ref = inner_loop_dynamics(spec.inner_loop, spec.filter,
                                                x[il:il + n_il], ports, i_cv, v_cf, i_g)
        f[il:il + n_il] = d_inner

        v_cv = converter_output(spec.converter, spec.dc_source, v_cv_ref)
        f[fs:fs + 6] = filter_dynamics(spec.filter, i_cv, v_cf, i_g, v_cv, (vr, vi),
                                       omega_sys, omega_b)
        cache[c:c + 8] = (p_e, q_e, vq_pll, omega_pll, ports.theta_olc, ports.omega_olc,
                          v_cv[0], v_cv[1])
        return i_g

    def initialize(self, P, Q, V):
        return initialize_inverter(self, P, Q, V, self.omega_b)


def _stage_fail(stage, msg, residual=None):
    return InitializationFailure(f"{stage}: {msg}", stage=stage, residual=residual)


def initialize_inverter(model, P, Q, V, omega_b=2 * math.pi * 60):
    """Filter -> PLL -> outer loop -> inner loop initialization sequence."""
    spec = model.spec if isinstance(model, InverterModel) else model
    if not isinstance(model, InverterModel):
        model = InverterModel("inverter", None, spec, omega_b)
    filt, inner = spec.filter, spec.inner_loop
    V = complex(V)
    if abs(V) == 0:
        raise _stage_fail("filter", "zero terminal voltage")
    # 1. filter steady state from the grid side inward (omega_sys = 1)
    Ig = (complex(P, Q) / V).conjugate()
    Vcf = V + complex(filt.rg, filt.lg) * Ig
    Icv = Ig + 1j * filt.cf * Vcf
    Vcv = Vcf + complex(filt.rf, filt.lf) * Icv
    if abs(Vcf) == 0:
        raise _stage_fail("filter", "capacitor voltage collapses to zero")

    # 2. PLL locks on the capacitor voltage
    theta = cmath.phase(Vcf)
    pll_states = [0.0, theta] if isinstance(spec.freq_estimator, SRFPLL) else []

    # 3. outer loop
    S_cf = Vcf * Ig.conjugate()
    p_e, q_e = S_cf.real, S_cf.imag
    refs = {"p_ref": p_e, "q_ref": q_e, "v_ref": abs(Vcf), "omega_ref": 1.0}
    outer = spec.outer_loop
    if isinstance(outer, GridFollowingPQ) and not isinstance(spec.freq_estimator, SRFPLL):
        raise _stage_fail("pll", "grid-following outer loop needs a PLL")

    # 4. inner loop back-solve in the outer-loop frame
    icd, icq = network_to_device(Icv.real, Icv.imag, theta)
    vcd, vcq = network_to_device(Vcf.real, Vcf.imag, theta)
    igd, igq = network_to_device(Ig.real, Ig.imag, theta)
    k = spec.dc_source.v_dc / spec.converter.rated_v_dc
    if k <= 0:
        raise _stage_fail("inner", "non-positive DC voltage")
    m = complex(*network_to_device(Vcv.real, Vcv.imag, theta)) / k
    if abs(m) > spec.converter.max_modulation:
        raise _stage_fail("inner", f"required modulation |m| = {abs(m):.4g} exceeds "
                          f"{spec.converter.max_modulation} (DC voltage too low)", abs(m))
    if inner.kic == 0:
        raise _stage_fail("inner", "current integrator gain is zero")
    gamma = [(m.real - inner.kffv * vcd + filt.lf * icq) / inner.kic,
             (m.imag - inner.kffv * vcq - filt.lf * icd) / inner.kic]
    if isinstance(outer, GridFollowingPQ):
        outer_states = [icd / outer.ki_p, -icq / outer.ki_q]
        inner_states = gamma
    else:
        if inner.kiv == 0:
            raise _stage_fail("inner", "voltage integrator gain is zero")
        xi = [(icd - inner.kffi * igd + filt.cf * vcq) / inner.kiv,
              (icq - inner.kffi * igq - filt.cf * vcd) / inner.kiv]
        inner_states = xi + gamma
        if isinstance(outer, VSM):
            outer_states = [theta, 1.0, p_e, q_e]
        else:
            outer_states = [theta, p_e, q_e]

    states = [Icv.real, Icv.imag, Vcf.real, Vcf.imag, Ig.real, Ig.imag] + pll_states \
        + outer_states + inner_states

    # final check over the whole device, reported per component
    f = [0.0] * model.n_states
    model.evaluate(states, 0, V.real, V.imag, refs, f, [0.0] * 8, 0, 1.0, omega_b)
    for slot, names in model.components:
        off = model.offsets[slot]
        worst = max((abs(f[off + j]) for j in range(len(names))), default=0.0)
        if worst > 1e-9:
            stage = {"freq_estimator": "pll", "outer_loop": "outer",
                     "inner_loop": "inner"}.get(slot, "filter")
            raise _stage_fail(stage, f"residual derivative {worst:.3g} after initialization",
                              worst)
    return DeviceInit(states, refs, {"theta_olc": theta, "p_e": p_e, "q_e": q_e})
