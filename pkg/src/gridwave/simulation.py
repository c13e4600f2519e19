"""Compiled simulation model: state index, evaluators, Jacobian, events.

Physics is written once as ``f(x)`` with a diagonal mass matrix ``M``:

* mass-matrix form ``M dx/dt = h(x)`` with ``h = f``;
* residual form ``r(x, dx) = M dx - f(x)``.

Rows with ``M = 0`` are algebraic constraints ``0 = f(x)``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import dual
from . import numeric as nm
from .errors import (InitializationFailure, NonFiniteJacobianEntry, NonFiniteResidual,
                     SingularAlgebraicRestart, ValidationError)
from .generator import GeneratorDevice, GeneratorModel
from .inverter import InverterDevice, InverterModel
from .loads import LoadAggregate, aggregate_current
from .network import NetworkModel, kvl_residual
from .powerflow import device_dispatch, solve_powerflow
from .source import SourceDevice, SourceModel
from .system import StaticLoad, series_admittance, validate_system

log = logging.getLogger(__name__)

FORMULATIONS = ("residual", "mass_matrix")


# --- state index ----------------------------------------------------------------

class StateIndex:
    """Tree ``owner -> component -> state -> offset`` plus flat qualified names."""

    def __init__(self):
        self.tree = {}
        self.names = []
        self._lookup = {}

    def add(self, owner, component, state, qualified):
        off = len(self.names)
        self.tree.setdefault(owner, {}).setdefault(component, {})[state] = off
        self.names.append(qualified)
        self._lookup[qualified] = off
        return off

    def __len__(self):
        return len(self.names)

    def __getitem__(self, qualified):
        return self._lookup[qualified]

    def __contains__(self, qualified):
        return qualified in self._lookup

    def unflatten(self, vec):
        return {o: {c: {s: vec[k] for s, k in states.items()}
                    for c, states in comps.items()}
                for o, comps in self.tree.items()}

    def flatten(self, nested):
        out = np.zeros(len(self.names))
        for o, comps in self.tree.items():
            for c, states in comps.items():
                for s, k in states.items():
                    out[k] = nested[o][c][s]
        return out


@dataclass
class GlobalVars:
    omega_sys: float = 1.0


@dataclass
class ResidualVector:
    """Residual split into device/network and differential/algebraic parts."""
    values: np.ndarray
    x_d: np.ndarray
    x_a: np.ndarray
    y_d: np.ndarray
    y_a: np.ndarray


# --- perturbations ----------------------------------------------------------------

@dataclass(frozen=True)
class BranchTrip:
    time: float
    branch: str
    kind = "branch_trip"

    def describe(self):
        return f"trip branch {self.branch}"


@dataclass(frozen=True)
class GeneratorTrip:
    time: float
    device: str
    kind = "generator_trip"

    def describe(self):
        return f"trip device {self.device}"


@dataclass(frozen=True)
class ControlReferenceChange:
    time: float
    device: str
    field: str
    value: float
    kind = "reference_change"

    def describe(self):
        return f"{self.device}.{self.field} -> {self.value}"


@dataclass(frozen=True)
class LoadStep:
    time: float
    bus: int
    dp: float
    dq: float = 0.0
    kind = "load_step"

    def describe(self):
        return f"load step at bus {self.bus}: {self.dp:+g} {self.dq:+g}j"


_PERTURBATIONS = {c.kind: c for c in (BranchTrip, GeneratorTrip, ControlReferenceChange,
                                      LoadStep)}


def perturbation_from_dict(d):
    from ._parse import pick_kind
    return pick_kind(d, _PERTURBATIONS, "perturbation")


# --- compiled model --------------------------------------------------------------------

class SimulationInputs:
    def __init__(self, system, formulation="residual", all_lines_dynamic=False):
        if formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}")
        self.system = system
        self.formulation = formulation
        self.omega_b = system.omega_b
        self.globals = GlobalVars()
        bus_idx = system.bus_index()

        ideal = [d.bus for d in system.devices
                 if isinstance(d.model, SourceDevice) and d.model.ideal]
        self.network = NetworkModel(system, all_lines_dynamic, force_algebraic=ideal)

        self.index = StateIndex()
        self.models, self.starts, self.bus_pos, self.refs = [], [], [], []
        self.cache_offsets = []
        n_cache = 0
        for dev in system.devices:
            m = _make_model(dev, self.omega_b)
            self.models.append(m)
            self.bus_pos.append(bus_idx[dev.bus])
            self.starts.append(len(self.index))
            for comp, names in m.components:
                for s in names:
                    self.index.add(dev.name, comp, s, f"{dev.name}.{comp}.{s}")
            self.refs.append({})
            self.cache_offsets.append(n_cache)
            n_cache += len(m.inner_names)
        self.cache = [0.0] * n_cache

        self.branch_offset = len(self.index)
        for d in self.network.dynamic:
            for s in ("i_d", "i_q"):
                self.index.add(d.name, "branch", s, f"{d.name}.{s}")
        self.v_offset = len(self.index)
        for b in system.buses:
            for s in ("v_d", "v_q"):
                self.index.add(b.name, "bus", s, f"{b.name}.{s}")
        self.n = len(self.index)

        grouped = {}
        for ld in system.loads:
            grouped.setdefault(bus_idx[ld.bus], []).append(ld)
        self.loads = {k: LoadAggregate(system.buses[k].number, members)
                      for k, members in grouped.items()}

        self.frozen = {}
        self.mass_override = set()
        self.x0 = None
        self.powerflow = None
        self._f = [0.0] * self.n
        self.invalidate()

    @property
    def names(self):
        return self.index.names

    # -- bookkeeping -----------------------------------------------------------
    def invalidate(self):
        """Refresh the mass diagonal and drop the cached Jacobian structure."""
        self.mass = self._assemble_mass()
        self._pattern = None

    def _assemble_mass(self):
        M = np.zeros(self.n)
        for k, m in enumerate(self.models):
            if m.name not in self.frozen:
                s = self.starts[k]
                M[s:s + m.n_states] = m.mass
        net = self.network
        for r, d in enumerate(net.dynamic):
            if net.in_service(d.name):
                M[self.branch_offset + 2 * r:self.branch_offset + 2 * r + 2] = d.l / self.omega_b
        for k in range(net.n_bus):
            M[self.v_offset + 2 * k:self.v_offset + 2 * k + 2] = net.c_lump[k] / self.omega_b
        for j in self.mass_override:
            M[j] = 0.0
        return M

    def device(self, name):
        for k, m in enumerate(self.models):
            if m.name == name:
                return k
        raise KeyError(f"unknown device '{name}'")

    def inner_variables(self, name):
        k = self.device(name)
        m, c = self.models[k], self.cache_offsets[k]
        return {v: nm.value(self.cache[c + j]) for j, v in enumerate(m.inner_names)}

    # -- physics -------------------------------------------------------------------
    def _physics(self, x, f, record=None):
        net = self.network
        vo = self.v_offset
        ws, wb = self.globals.omega_sys, self.omega_b
        inj = [0.0] * (2 * net.n_bus)
        for k, m in enumerate(self.models):
            s = self.starts[k]
            hold = self.frozen.get(m.name)
            if hold is not None:
                for j in range(m.n_states):
                    f[s + j] = hold[j] - x[s + j]
                continue
            b = self.bus_pos[k]
            ir, ii = m.evaluate(x, s, x[vo + 2 * b], x[vo + 2 * b + 1], self.refs[k], f,
                                self.cache, self.cache_offsets[k], ws, wb)
            inj[2 * b] = inj[2 * b] + ir
            inj[2 * b + 1] = inj[2 * b + 1] + ii
            if record is not None:
                record.append((k, ir, ii))
        for b, agg in self.loads.items():
            i_d, i_q = aggregate_current(agg, x[vo + 2 * b], x[vo + 2 * b + 1])
            inj[2 * b] = inj[2 * b] - i_d
            inj[2 * b + 1] = inj[2 * b + 1] - i_q
        o = self.branch_offset
        for r, d in enumerate(net.dynamic):
            p = o + 2 * r
            i_d, i_q = x[p], x[p + 1]
            if not net.in_service(d.name):
                f[p], f[p + 1] = -i_d, -i_q
                continue
            a, b = d.k_from, d.k_to
            f[p], f[p + 1] = kvl_residual(d.r, ws * d.l, i_d, i_q,
                                          (x[vo + 2 * a], x[vo + 2 * a + 1]),
                                          (x[vo + 2 * b], x[vo + 2 * b + 1]))
            inj[2 * a] = inj[2 * a] - i_d
            inj[2 * a + 1] = inj[2 * a + 1] - i_q
            inj[2 * b] = inj[2 * b] + i_d
            inj[2 * b + 1] = inj[2 * b + 1] + i_q
        net.kcl(x[vo:], inj, f, vo)
        return f

    def rhs(self, t, x):
        """h(x) of ``M dx/dt = h(x)`` as a float array."""
        xl = _as_list(x)
        f = self._physics(xl, self._f)
        out = np.array(f, dtype=float)
        if not np.all(np.isfinite(out)):
            self._raise_nonfinite(np.asarray(x, dtype=float), out)
        return out

    def residual(self, t, x, xdot):
        return self.mass * np.asarray(xdot, dtype=float) - self.rhs(t, x)

    def _raise_nonfinite(self, x, out):
        bad_x = np.flatnonzero(~np.isfinite(x))
        k = bad_x[0] if bad_x.size else np.flatnonzero(~np.isfinite(out))[0]
        name = self.names[k]
        raise NonFiniteResidual(f"non-finite value at state '{name}'", state=name)

    def evaluate_generic(self, x):
        """f(x) for any scalar mode (float, Dual, mpmath); returns a list."""
        return self._physics(list(x), [0.0] * self.n)

    # -- Jacobian ----------------------------------------------------------------------
    def _analyze(self, x):
        n = self.n
        rng = np.random.default_rng(12345)
        x = np.asarray(x, dtype=float)
        probes = [x, x + 1e-3 * rng.standard_normal(n) * (1.0 + np.abs(x))]
        rows, cols = [np.arange(n)], [np.arange(n)]
        with nm.structure_probe():
            for p in probes:
                f = self._physics(dual.seed(p, range(n), n), [0.0] * n)
                for i, fi in enumerate(f):
                    if isinstance(fi, dual.Dual):
                        nz = np.flatnonzero(fi.der)
                        rows.append(np.full(nz.size, i))
                        cols.append(nz)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        P = sp.csc_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        P.sum_duplicates()
        P.data[:] = 1.0
        self._J = P.astype(float)
        self._rows = P.indices.copy()
        self._cols = np.repeat(np.arange(n), np.diff(P.indptr))
        self._colors, self._ncolors = _color_columns(P)
        self._pattern = P

    def jacobian(self, x):
        """Sparse df/dx at ``x`` by compressed forward-mode differentiation."""
        if self._pattern is None:
            self._analyze(x)
        k = self._ncolors
        f = self._physics(dual.seed(np.asarray(x, dtype=float), self._colors, k),
                          [0.0] * self.n)
        D = np.zeros((self.n, k))
        for i, fi in enumerate(f):
            if isinstance(fi, dual.Dual):
                D[i] = fi.der
        vals = D[self._rows, self._colors[self._cols]]
        if not np.all(np.isfinite(vals)):
            j = self._cols[np.flatnonzero(~np.isfinite(vals))[0]]
            raise NonFiniteJacobianEntry(f"non-finite Jacobian column '{self.names[j]}'")
        self._J.data[:] = vals
        return self._J

    def jac(self, t, x):
        return self.jacobian(x)

    # -- solver hooks ---------------------------------------------------------------------
    def apply_event(self, perturbation, t, x):
        return apply_perturbation(self, perturbation, x)


def _as_list(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    return [float(v) for v in x]


def _color_columns(P):
    """Greedy distance-2 coloring so columns sharing a row get distinct colors."""
    n = P.shape[1]
    R = P.tocsr()
    colors = -np.ones(n, dtype=int)
    for j in range(n):
        rows = P.indices[P.indptr[j]:P.indptr[j + 1]]
        used = set()
        for i in rows:
            for jj in R.indices[R.indptr[i]:R.indptr[i + 1]]:
                if colors[jj] >= 0:
                    used.add(colors[jj])
        c = 0
        while c in used:
            c += 1
        colors[j] = c
    return colors, int(colors.max()) + 1 if n else 0


def _make_model(dev, omega_b):
    m = dev.model
    if hasattr(m, "build_model"):
        return m.build_model(dev.name, dev.bus, omega_b)
    if isinstance(m, GeneratorDevice):
        return GeneratorModel(dev.name, dev.bus, m)
    if isinstance(m, InverterDevice):
        return InverterModel(dev.name, dev.bus, m, omega_b)
    if isinstance(m, SourceDevice):
        return SourceModel(dev.name, dev.bus, m)
    raise TypeError(f"unsupported device model {type(m).__name__}")


# --- public operations -----------------------------------------------------------------------

def build_simulation(system, formulation="residual", all_lines_dynamic=False):
    report = validate_system(system)
    if not report.ok:
        raise ValidationError(report)
    return SimulationInputs(system, formulation, all_lines_dynamic)


def eval_residual(t, x, dx, inputs):
    return inputs.residual(t, x, dx)


def eval_mass_matrix_rhs(t, x, inputs):
    return inputs.rhs(t, x)


def split_residual(inputs, r):
    r = np.asarray(r)
    dev = np.zeros(inputs.n, dtype=bool)
    dev[:inputs.branch_offset] = True
    diff = inputs.mass > 0
    return ResidualVector(r, r[dev & diff], r[dev & ~diff], r[~dev & diff], r[~dev & ~diff])


def set_algebraic(inputs, qualified):
    """Singular-perturbation toggle: treat one state as an algebraic constraint."""
    inputs.mass_override.add(inputs.index[qualified])
    inputs.invalidate()


def initialize_simulation(inputs, powerflow=None, tol=1e-9, max_iter=20):
    """Consistent initial state from the power flow and device initializers."""
    system = inputs.system
    pf = powerflow if powerflow is not None else solve_powerflow(system)
    inputs.powerflow = pf
    V = pf.V
    x = np.zeros(inputs.n)
    vo = inputs.v_offset
    x[vo:vo + 2 * len(V):2] = V.real
    x[vo + 1:vo + 2 * len(V):2] = V.imag
    for b, agg in inputs.loads.items():
        agg.v0 = complex(V[b])

    dispatch = device_dispatch(system, pf)
    for k, m in enumerate(inputs.models):
        S = dispatch[m.name]
        try:
            init = m.initialize(S.real, S.imag, complex(V[inputs.bus_pos[k]]))
        except InitializationFailure as exc:
            raise InitializationFailure(f"device '{m.name}': {exc}", device=m.name,
                                        stage=exc.stage, residual=exc.residual) from exc
        s = inputs.starts[k]
        x[s:s + m.n_states] = init.states
        inputs.refs[k].update(init.refs)

    for r, d in enumerate(inputs.network.dynamic):
        i = (V[d.k_from] - V[d.k_to]) / complex(d.r, d.l)
        x[inputs.branch_offset + 2 * r] = i.real
        x[inputs.branch_offset + 2 * r + 1] = i.imag

    f = inputs.rhs(0.0, x)
    err = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while err > tol and it < max_iter:
        J = inputs.jacobian(x).toarray()
        dx = np.linalg.lstsq(J, -f, rcond=None)[0]
        x = x + dx
        f = inputs.rhs(0.0, x)
        err = float(np.max(np.abs(f)))
        it += 1
    if err > tol:
        worst = inputs.names[int(np.argmax(np.abs(f)))]
        raise InitializationFailure(f"global polish left residual {err:.3g} at '{worst}'",
                                    device=worst.split(".")[0], stage="global", residual=err)
    log.info("initialized %d states, residual %.2e after %d polish steps", inputs.n, err, it)
    inputs.x0 = x
    return x


def resolve_algebraic(inputs, x, tol=1e-10, max_iter=30):
    """Newton on the algebraic rows with differential states held."""
    x = np.array(x, dtype=float)
    alg = np.flatnonzero(inputs.mass == 0)
    if alg.size == 0:
        return x
    for _ in range(max_iter):
        fa = inputs.rhs(0.0, x)[alg]
        if np.max(np.abs(fa)) <= tol:
            return x
        Jaa = inputs.jacobian(x).tocsr()[alg][:, alg].toarray()
        if np.linalg.cond(Jaa) > 1e14:
            raise SingularAlgebraicRestart("algebraic subsystem singular at restart")
        x[alg] -= np.linalg.solve(Jaa, fa)
    fa = inputs.rhs(0.0, x)[alg]
    if np.max(np.abs(fa)) > 1e-9:
        raise SingularAlgebraicRestart(
            f"algebraic re-solve stalled at residual {np.max(np.abs(fa)):.3g}")
    return x


def apply_perturbation(inputs, perturbation, x):
    """Mutate ``inputs`` per the perturbation and return a consistent restart state."""
    p = perturbation
    x = np.array(x, dtype=float)
    if isinstance(p, BranchTrip):
        net = inputs.network
        if p.branch not in {br.name for br in inputs.system.branches}:
            raise KeyError(f"unknown branch '{p.branch}'")
        net.out_of_service.add(p.branch)
        if net.islands() > 1:
            net.out_of_service.discard(p.branch)
            raise SingularAlgebraicRestart(
                f"tripping '{p.branch}' islands the network; no consistent restart")
        net.restamp()
        for r, d in enumerate(net.dynamic):
            if d.name == p.branch:
                x[inputs.branch_offset + 2 * r:inputs.branch_offset + 2 * r + 2] = 0.0
    elif isinstance(p, GeneratorTrip):
        k = inputs.device(p.device)
        m, s = inputs.models[k], inputs.starts[k]
        inputs.frozen[m.name] = x[s:s + m.n_states].tolist()
    elif isinstance(p, ControlReferenceChange):
        k = inputs.device(p.device)
        if p.field not in inputs.refs[k]:
            raise KeyError(f"device '{p.device}' has no reference '{p.field}'; "
                           f"available: {sorted(inputs.refs[k])}")
        inputs.refs[k][p.field] = float(p.value)
    elif isinstance(p, LoadStep):
        idx = inputs.system.bus_index()
        if p.bus not in idx:
            raise KeyError(f"unknown bus {p.bus}")
        b = idx[p.bus]
        ld = StaticLoad(f"step@{p.time:g}", p.bus, "constant_power", p.dp, p.dq)
        vo = inputs.v_offset
        if b in inputs.loads:
            inputs.loads[b].members.append(ld)
            inputs.loads[b].regroup()
        else:
            v0 = complex(x[vo + 2 * b], x[vo + 2 * b + 1])
            inputs.loads[b] = LoadAggregate(p.bus, [ld], v0 if abs(v0) > 0 else 1.0)
    else:
        raise TypeError(f"unsupported perturbation {type(p).__name__}")
    inputs.invalidate()
    return resolve_algebraic(inputs, x)


def power_balance(inputs, x):
    """Device P minus load P minus series losses (zero on QSP networks)."""
    x = np.asarray(x, dtype=float)
    record = []
    inputs._physics(x.tolist(), [0.0] * inputs.n, record)
    vo = inputs.v_offset
    v = x[vo::2] + 1j * x[vo + 1::2]
    p_dev = sum((v[inputs.bus_pos[k]] * complex(ir, ii).conjugate()).real
                for k, ir, ii in record)
    p_load = 0.0
    for b, agg in inputs.loads.items():
        i_d, i_q = aggregate_current(agg, v[b].real, v[b].imag)
        p_load += (v[b] * complex(i_d, i_q).conjugate()).real
    idx = inputs.system.bus_index()
    net = inputs.network
    losses = 0.0
    for br in inputs.system.branches:
        if not net.in_service(br.name):
            continue
        if br.name in net.dynamic_names:
            r = [d.name for d in net.dynamic].index(br.name)
            i = complex(x[inputs.branch_offset + 2 * r], x[inputs.branch_offset + 2 * r + 1])
        else:
            i = (v[idx[br.from_bus]] - v[idx[br.to_bus]]) * series_admittance(br)
        losses += br.r * abs(i) ** 2
    return p_dev - p_load - losses
