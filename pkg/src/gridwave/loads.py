"""Static ZIP and exponential loads as bus current draws (network frame).

Returned currents are drawn *from* the bus. Every member is anchored at the
power-flow voltage ``v0`` of its bus: at ``|v| = |v0|`` each load draws
exactly ``p + jq``.
"""
import warnings
from dataclasses import dataclass

from . import numeric as nm
from .errors import VoltageCollapseFloor

VOLTAGE_FLOOR = 0.1
ZIP_KINDS = ("constant_impedance", "constant_current", "constant_power")


@dataclass
class LoadAggregate:
    bus: int
    members: list
    v0: complex = 1.0 + 0.0j

    def __post_init__(self):
        if abs(self.v0) <= 0:
            raise ValueError("anchor voltage must be nonzero")
        self.regroup()

    def regroup(self):
        """Refresh the per-kind power sums after ``members`` changed."""
        sums = {k: [0.0, 0.0] for k in ZIP_KINDS}
        self.exponential = []
        for ld in self.members:
            if ld.kind == "exponential":
                self.exponential.append(ld)
            else:
                sums[ld.kind][0] += ld.p
                sums[ld.kind][1] += ld.q
        self.pz, self.qz = sums["constant_impedance"]
        self.pi, self.qi = sums["constant_current"]
        self.pp, self.qp = sums["constant_power"]


def _magnitude(v_d, v_q, floor):
    vm = nm.sqrt(v_d * v_d + v_q * v_q)
    if nm.value(vm) < floor and not nm._probe:
        warnings.warn(VoltageCollapseFloor(
            f"|v| = {nm.value(vm):.3g} below load floor {floor}"), stacklevel=3)
    return vm, nm.floor_magnitude(vm, floor)


def zip_load_current(agg, v_d, v_q, floor=VOLTAGE_FLOOR):
    """Total ZIP current drawn at a bus.

    Z and I terms follow the aggregate formula with the ``1/(|v||v0|^2)``
    prefactor; the P term uses ``1/|v|^2`` so the member draws p + jq at any
    voltage above the floor.
    """
    v0 = abs(agg.v0)
    vm, ve = _magnitude(v_d, v_q, floor)
    z = 1.0 / (v0 * v0)
    i = 1.0 / (ve * v0)
    p = 1.0 / (ve * ve)
    a = agg.pz * z + agg.pi * i + agg.pp * p
    b = agg.qz * z + agg.qi * i + agg.qp * p
    return a * v_d + b * v_q, a * v_q - b * v_d


def exponential_load_current(load, v_d, v_q, v0, floor=VOLTAGE_FLOOR):
    """Current for P = p (|v|/|v0|)^alpha, Q = q (|v|/|v0|)^beta."""
    v0m = abs(v0)
    vm, ve = _magnitude(v_d, v_q, floor)
    ratio = ve / v0m
    # below the floor the member behaves as its floor-voltage admittance
    P = load.p * ratio ** load.alpha
    Q = load.q * ratio ** load.beta
    inv = 1.0 / (ve * ve)
    return (P * v_d + Q * v_q) * inv, (P * v_q - Q * v_d) * inv


def aggregate_current(agg, v_d, v_q, floor=VOLTAGE_FLOOR):
    i_d, i_q = zip_load_current(agg, v_d, v_q, floor)
    for ld in agg.exponential:
        a, b = exponential_load_current(ld, v_d, v_q, agg.v0, floor)
        i_d = i_d + a
        i_q = i_q + b
    return i_d, i_q
