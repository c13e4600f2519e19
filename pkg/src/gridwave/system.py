"""Static system description, JSON loading, validation and Y-bus assembly.

All quantities are per unit on the system base (``base_mva``); devices may
declare their own ``base_mva`` and are rescaled on load.
"""
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.sparse as sp

from ._parse import build
from .errors import BusReferenceError, DuplicateIdError, ParseError, SingularBranchError
from .generator import (SEXS, TGOV1, Classical, GeneratorDevice, OneDOneQ,
                        generator_from_dict)
from .inverter import (VSM, Droop, GridFollowingPQ, InverterDevice, SRFPLL,
                       inverter_from_dict)
from .source import SourceDevice

BUS_KINDS = ("reference", "PV", "PQ")
LOAD_KINDS = ("constant_impedance", "constant_current", "constant_power", "exponential")


@dataclass(frozen=True)
class Bus:
    name: str
    number: int
    kind: str
    voltage: float = 1.0
    shunt_b: float = 0.0
    shunt_c_lump: float = 0.0


@dataclass(frozen=True)
class Branch:
    name: str
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    model: str = "algebraic"


@dataclass(frozen=True)
class StaticLoad:
    name: str
    bus: int
    kind: str
    p: float
    q: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0


@dataclass(frozen=True)
class DynamicDevice:
    name: str
    bus: int
    model: Union[GeneratorDevice, InverterDevice, SourceDevice]
    p: float = 0.0
    q: float = 0.0


@dataclass(frozen=True)
class SystemModel:
    base_power: float
    base_frequency: float
    buses: tuple
    branches: tuple = ()
    loads: tuple = ()
    devices: tuple = ()

    @property
    def omega_b(self):
        return 2.0 * math.pi * self.base_frequency

    def bus_index(self):
        """Map bus number -> position in ``buses``."""
        return {b.number: k for k, b in enumerate(self.buses)}

    def reference_bus(self):
        refs = [b for b in self.buses if b.kind == "reference"]
        return refs[0] if len(refs) == 1 else None


# --- loading ---------------------------------------------------------------------

_TOP_KEYS = {"base_mva", "base_frequency_hz", "buses", "branches", "loads", "devices"}


def load_system(path):
    """Parse a system JSON file into a :class:`SystemModel`."""
    with open(path) as fh:
        text = fh.read()
    return parse_system(text, source=str(path))


def parse_system(text, source="<string>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return system_from_dict(doc)


def system_from_dict(doc):
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ParseError(f"unknown top-level key(s) {sorted(unknown)}")
    for key in ("base_mva", "base_frequency_hz", "buses"):
        if key not in doc:
            raise ParseError(f"missing top-level key '{key}'")
    base = _number(doc["base_mva"], "base_mva")
    freq = _number(doc["base_frequency_hz"], "base_frequency_hz")

    buses = tuple(_bus(b, f"buses[{k}]") for k, b in enumerate(_list(doc, "buses")))
    branches = tuple(_branch(b, f"branches[{k}]")
                     for k, b in enumerate(_list(doc, "branches")))
    loads = tuple(_load(b, f"loads[{k}]") for k, b in enumerate(_list(doc, "loads")))
    devices = tuple(_device(b, f"devices[{k}]", base)
                    for k, b in enumerate(_list(doc, "devices")))

    numbers = Counter(b.number for b in buses)
    dup = [n for n, c in numbers.items() if c > 1]
    if dup:
        raise DuplicateIdError(f"duplicate bus number(s) {dup}")
    names = Counter(c.name for c in (*buses, *branches, *loads, *devices))
    dup = [n for n, c in names.items() if c > 1]
    if dup:
        raise DuplicateIdError(f"duplicate component name(s) {dup}")
    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in numbers:
                raise BusReferenceError(f"branch '{br.name}' references missing bus {end}")
    for c in (*loads, *devices):
        if c.bus not in numbers:
            raise BusReferenceError(f"'{c.name}' references missing bus {c.bus}")
    return SystemModel(base, freq, buses, branches, loads, devices)


def _list(doc, key):
    v = doc.get(key, [])
    if not isinstance(v, list):
        raise ParseError(f"'{key}' must be a list")
    return v


def _number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(f"{where} must be a finite number")
    return float(v)


def _int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{where} must be an integer")
    return v


def _str(v, where):
    if not isinstance(v, str):
        raise ParseError(f"{where} must be a string")
    return v


def _bus(d, where):
    b = build(Bus, d, where)
    _str(b.name, f"{where}.name")
    _int(b.number, f"{where}.number")
    if b.kind not in BUS_KINDS:
        raise ParseError(f"{where}.kind must be one of {BUS_KINDS}")
    return b


def _branch(d, where):
    if not isinstance(d, dict):
        raise ParseError(f"{where}: expected an object")
    d = dict(d)
    for old, new in (("from", "from_bus"), ("to", "to_bus")):
        if new in d:
            raise ParseError(f"{where}: unknown key(s) ['{new}']")
        if old in d:
            d[new] = d.pop(old)
    b = build(Branch, d, where)
    _str(b.name, f"{where}.name")
    _int(b.from_bus, f"{where}.from")
    _int(b.to_bus, f"{where}.to")
    if b.model not in ("algebraic", "dynamic"):
        raise ParseError(f"{where}.model must be 'algebraic' or 'dynamic'")
    return b


def _load(d, where):
    ld = build(StaticLoad, d, where)
    _str(ld.name, f"{where}.name")
    _int(ld.bus, f"{where}.bus")
    if ld.kind not in LOAD_KINDS:
        raise ParseError(f"{where}.kind must be one of {LOAD_KINDS}")
    return ld


def _device(d, where, base):
    if not isinstance(d, dict):
        raise ParseError(f"{where}: expected an object")
    kinds = [k for k in ("generator", "inverter", "source") if k in d]
    if len(kinds) != 1:
        raise ParseError(f"{where}: exactly one of 'generator', 'inverter', 'source' required")
    unknown = set(d) - {"name", "bus", "p", "q", "base_mva", kinds[0]}
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {sorted(unknown)}")
    for key in ("name", "bus"):
        if key not in d:
            raise ParseError(f"{where}: missing required key '{key}'")
    kind = kinds[0]
    body = d[kind]
    if not isinstance(body, dict):
        raise ParseError(f"{where}.{kind}: expected an object")
    if kind == "generator":
        model = generator_from_dict(body, f"{where}.generator")
    elif kind == "inverter":
        model = inverter_from_dict(body, f"{where}.inverter")
    else:
        model = build(SourceDevice, body, f"{where}.source")
    if "base_mva" in d:
        dev_base = _number(d["base_mva"], f"{where}.base_mva")
        if dev_base <= 0:
            raise ParseError(f"{where}.base_mva must be positive")
        model = model.to_system_base(base / dev_base)
    return DynamicDevice(
        name=_str(d["name"], f"{where}.name"),
        bus=_int(d["bus"], f"{where}.bus"),
        model=model,
        p=_number(d.get("p", 0.0), f"{where}.p"),
        q=_number(d.get("q", 0.0), f"{where}.q"),
    )


# --- validation ---------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    component: str
    rule: str
    detail: str = ""

    def __str__(self):
        return f"{self.component}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def rules(self):
        return [v.rule for v in self.violations]

    def add(self, component, rule, detail=""):
        self.violations.append(Violation(component, rule, detail))

    def __str__(self):
        if self.ok:
            return "system is valid"
        return "\n".join(str(v) for v in self.violations)


def validate_system(system):
    """Collect every invariant violation; an empty report means simulatable."""
    rep = ValidationReport()
    if not system.buses:
        rep.add("system", "no buses")
        return rep
    numbers = Counter(b.number for b in system.buses)
    for n, c in numbers.items():
        if c > 1:
            rep.add(f"bus {n}", "duplicate bus number")
    names = Counter(c.name for c in (*system.buses, *system.branches, *system.loads,
                                     *system.devices))
    for n, c in names.items():
        if c > 1:
            rep.add(n, "duplicate name")
    nref = sum(b.kind == "reference" for b in system.buses)
    if nref != 1:
        rep.add("system", "reference bus count", f"found {nref}, need exactly 1")
    if not math.isfinite(system.base_power) or system.base_power <= 0:
        rep.add("system", "nonpositive base power")
    if system.base_frequency <= 0:
        rep.add("system", "nonpositive base frequency")

    for b in system.buses:
        if b.kind not in BUS_KINDS:
            rep.add(b.name, "unknown bus kind", b.kind)
        if not b.voltage > 0:
            rep.add(b.name, "nonpositive voltage setpoint")
        if b.shunt_c_lump < 0:
            rep.add(b.name, "negative capacitance lump")

    for br in system.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in numbers:
                rep.add(br.name, "unknown bus", str(end))
        if br.from_bus == br.to_bus:
            rep.add(br.name, "self loop")
        if br.r == 0 and br.x == 0:
            rep.add(br.name, "zero series impedance")
        if br.model == "dynamic" and br.x <= 0:
            rep.add(br.name, "nonpositive dynamic inductance")

    for ld in system.loads:
        if ld.bus not in numbers:
            rep.add(ld.name, "unknown bus", str(ld.bus))
        if ld.kind not in LOAD_KINDS:
            rep.add(ld.name, "unknown load kind", ld.kind)
        if not all(math.isfinite(v) for v in (ld.p, ld.q, ld.alpha, ld.beta)):
            rep.add(ld.name, "nonfinite load parameter")

    hosted = Counter()
    for dev in system.devices:
        if dev.bus not in numbers:
            rep.add(dev.name, "unknown bus", str(dev.bus))
        hosted[dev.bus] += 1
        m = dev.model
        if isinstance(m, GeneratorDevice):
            _validate_generator(rep, dev.name, m)
        elif isinstance(m, InverterDevice):
            _validate_inverter(rep, dev.name, m)

    for b in system.buses:
        if b.kind in ("reference", "PV") and hosted[b.number] == 0:
            rep.add(b.name, "controlled bus without device")

    if _islands(system) > 1:
        rep.add("system", "islanded network")
    return rep


def _validate_generator(rep, name, g):
    m = g.machine
    if m.r_a ** 2 + (m.xd_p * (m.xd_p if isinstance(m, Classical) else m.xq_p)) == 0:
        rep.add(name, "singular stator")
    if isinstance(m, OneDOneQ):
        for tname in ("Td0_p", "Tq0_p"):
            if not getattr(m, tname) > 0:
                rep.add(name, "nonpositive time constant", tname)
    if not g.shaft.H > 0:
        rep.add(name, "nonpositive inertia")
    a = g.avr
    if isinstance(a, SEXS):
        for tname in ("Tb", "Te"):
            if not getattr(a, tname) > 0:
                rep.add(name, "nonpositive time constant", tname)
        if not a.E_min < a.E_max:
            rep.add(name, "inverted limits", "E_min >= E_max")
    gov = g.governor
    if isinstance(gov, TGOV1):
        for tname in ("T1", "T3"):
            if not getattr(gov, tname) > 0:
                rep.add(name, "nonpositive time constant", tname)
        if not gov.V_min < gov.V_max:
            rep.add(name, "inverted limits", "V_min >= V_max")
        if not gov.R > 0:
            rep.add(name, "nonpositive droop", "R")


def _validate_inverter(rep, name, inv):
    f = inv.filter
    for pname in ("lf", "cf", "lg"):
        if not getattr(f, pname) > 0:
            rep.add(name, "nonpositive filter parameter", pname)
    o = inv.outer_loop
    if isinstance(o, VSM) and not o.Ta > 0:
        rep.add(name, "nonpositive virtual inertia")
    if isinstance(o, Droop) and not o.Rp > 0:
        rep.add(name, "nonpositive droop", "Rp")
    if isinstance(o, GridFollowingPQ) and not isinstance(inv.freq_estimator, SRFPLL):
        rep.add(name, "grid-following without pll")
    if isinstance(o, GridFollowingPQ) and (o.ki_p == 0 or o.ki_q == 0):
        rep.add(name, "zero integrator gain", "ki_p/ki_q")
    if not inv.dc_source.v_dc > 0:
        rep.add(name, "nonpositive dc voltage")
    if not inv.converter.rated_v_dc > 0:
        rep.add(name, "nonpositive rated dc voltage")
    i = inv.inner_loop
    if i.kic == 0 or (i.kiv == 0 and not inv.current_mode):
        rep.add(name, "zero integrator gain", "kiv/kic")


def _islands(system, out_of_service=()):
    idx = system.bus_index()
    parent = list(range(len(system.buses)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for br in system.branches:
        if br.name in out_of_service:
            continue
        if br.from_bus in idx and br.to_bus in idx:
            ra, rb = find(idx[br.from_bus]), find(idx[br.to_bus])
            parent[ra] = rb
    return len({find(k) for k in range(len(parent))})


def count_islands(system, out_of_service=()):
    return _islands(system, out_of_service)


# --- admittance ----------------------------------------------------------------------

def series_admittance(branch):
    if branch.r == 0 and branch.x == 0:
        raise SingularBranchError(f"branch '{branch.name}' has zero series impedance")
    return 1.0 / complex(branch.r, branch.x)


def build_admittance(system, dynamic_set=(), out_of_service=()):
    """Modified admittance matrix Y_a as scipy CSR.

    Series stamps of branches named in ``dynamic_set`` are left out (their
    currents become states); shunt terms of every in-service branch and bus
    are always included.
    """
    idx = system.bus_index()
    n = len(system.buses)
    names = {br.name for br in system.branches}
    missing = set(dynamic_set) - names
    if missing:
        raise ValueError(f"dynamic_set names unknown branches {sorted(missing)}")
    rows, cols, vals = [], [], []

    def stamp(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    for k, bus in enumerate(system.buses):
        stamp(k, k, 1j * bus.shunt_b)
    for br in system.branches:
        if br.name in out_of_service:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        y = series_admittance(br)
        sh = 0.5j * br.b
        stamp(i, i, sh)
        stamp(j, j, sh)
        if br.name not in dynamic_set:
            stamp(i, i, y)
            stamp(j, j, y)
            stamp(i, j, -y)
            stamp(j, i, -y)
    Y = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))
    return Y.tocsr()
