import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import case_doc, two_bus_doc
from gridwave import load_case
from gridwave.errors import (InitializationFailure, NonFiniteResidual,
                             SingularAlgebraicRestart, ValidationError)
from gridwave.loads import aggregate_current
from gridwave.simulation import (BranchTrip, ControlReferenceChange, GeneratorTrip, LoadStep,
                                 apply_perturbation, build_simulation, eval_mass_matrix_rhs,
                                 eval_residual, initialize_simulation, perturbation_from_dict,
                                 power_balance, set_algebraic, split_residual)
from gridwave.solvers import SolverConfig, integrate
from gridwave.system import Bus, DynamicDevice, SystemModel, build_admittance, system_from_dict

from gridwave.cases import CASES


def _gen_on_slack_doc():
    d = case_doc("omib")
    gen = d["devices"][1]
    gen["bus"] = 1
    d["devices"] = [gen]
    d["buses"] = [{"name": "b1", "number": 1, "kind": "reference", "voltage": 1.0},
                  {"name": "b2", "number": 2, "kind": "PQ"}]
    d["loads"] = [{"name": "z2", "bus": 2, "kind": "constant_impedance", "p": 0.5, "q": 0.1}]
    return d


def test_state_count_classical_qsp():
    inp = build_simulation(system_from_dict(_gen_on_slack_doc()))
    assert inp.n == 6
    np.testing.assert_array_equal(inp.mass, [1, 1, 0, 0, 0, 0])


def test_capacitive_buses_make_voltages_differential():
    d = _gen_on_slack_doc()
    for b in d["buses"]:
        b["shunt_c_lump"] = 0.01
    inp = build_simulation(system_from_dict(d))
    assert np.count_nonzero(inp.mass[inp.v_offset:]) == 4


def test_ideal_source_bus_stays_algebraic():
    d = case_doc("omib")
    d["buses"][0]["shunt_c_lump"] = 0.02
    inp = build_simulation(system_from_dict(d))
    assert np.all(inp.mass[inp.v_offset:inp.v_offset + 2] == 0)


@pytest.mark.parametrize("name", CASES)
def test_equilibrium_residual(name):
    inp = build_simulation(load_case(name))
    x = initialize_simulation(inp)
    r = eval_residual(0.0, x, np.zeros(inp.n), inp)
    assert np.max(np.abs(r)) <= 1e-9


def test_single_bus_source_and_constant_power_load():
    d = two_bus_doc()
    d["buses"] = d["buses"][:1]
    d["branches"] = []
    d["loads"] = [{"name": "p1", "bus": 1, "kind": "constant_power", "p": 0.4, "q": 0.1}]
    inp = build_simulation(system_from_dict(d))
    x0 = initialize_simulation(inp)
    rng = np.random.default_rng(3)
    x = x0 + 0.05 * rng.standard_normal(inp.n)
    f = eval_mass_matrix_rhs(0.0, x, inp)
    vo = inp.v_offset
    il = complex(*aggregate_current(inp.loads[0], x[vo], x[vo + 1]))
    expected = complex(x[0], x[1]) - il
    assert complex(f[vo], f[vo + 1]) == pytest.approx(expected, abs=1e-14)


def test_nan_state_is_named():
    inp = build_simulation(load_case("two_bus_machine"))
    x = initialize_simulation(inp).copy()
    k = inp.index["gen.shaft.omega"]
    x[k] = np.nan
    with pytest.raises(NonFiniteResidual) as exc:
        eval_residual(0.0, x, np.zeros(inp.n), inp)
    assert exc.value.state == "gen.shaft.omega"


@pytest.mark.parametrize("name", CASES)
@pytest.mark.parametrize("dyn", [False, True])
def test_formulations_agree_pointwise(name, dyn):
    res = build_simulation(load_case(name), "residual", dyn)
    mm = build_simulation(load_case(name), "mass_matrix", dyn)
    x0 = initialize_simulation(res)
    initialize_simulation(mm)
    rng = np.random.default_rng(7)
    for _ in range(5):
        x = x0 + 0.01 * rng.standard_normal(res.n)
        dx = rng.standard_normal(res.n)
        r = eval_residual(0.0, x, dx, res)
        h = eval_mass_matrix_rhs(0.0, x, mm)
        np.testing.assert_allclose(r, mm.mass * dx - h, rtol=0, atol=1e-12)
        alg = mm.mass == 0
        np.testing.assert_array_equal(r[alg], -h[alg])


def test_residual_split_partitions():
    inp = build_simulation(load_case("three_bus_mixed"), all_lines_dynamic=True)
    x = initialize_simulation(inp)
    rv = split_residual(inp, np.arange(inp.n, dtype=float))
    assert rv.x_d.size + rv.x_a.size + rv.y_d.size + rv.y_a.size == inp.n


def test_emt_state_count():
    qsp = build_simulation(load_case("three_bus_inverters"))
    emt = build_simulation(load_case("three_bus_inverters"), all_lines_dynamic=True)
    n_cap = int(np.count_nonzero(emt.network.c_lump > 0))
    assert emt.n - qsp.n == 2 * len(emt.network.dynamic)
    diff = lambda i: int(np.count_nonzero(i.mass))
    assert diff(emt) - diff(qsp) == 2 * len(emt.network.dynamic) + 2 * n_cap


def test_spt_toggle_keeps_equilibrium():
    full = build_simulation(load_case("three_bus_inverters"))
    x_full = initialize_simulation(full)
    spt = build_simulation(load_case("three_bus_inverters"))
    for s in ("icv_d", "icv_q"):
        set_algebraic(spt, f"vsm1.filter.{s}")
    assert spt.mass[spt.index["vsm1.filter.icv_d"]] == 0
    x_spt = initialize_simulation(spt)
    np.testing.assert_allclose(x_spt, x_full, rtol=0, atol=1e-8)
    tr = integrate(spt, SolverConfig(max_step=0.01), (0.0, 0.5), x_spt)
    assert np.max(np.abs(tr.final - x_spt)) <= 1e-8


def test_device_init_failure_names_device(doc):
    d = doc("two_bus_machine")
    d["devices"][1]["generator"]["avr"]["E_max"] = 1.0
    inp = build_simulation(system_from_dict(d))
    with pytest.raises(InitializationFailure) as exc:
        initialize_simulation(inp)
    assert exc.value.device == "gen" and "gen" in str(exc.value)


def test_invalid_system_rejected():
    d = two_bus_doc(r=0.0, x=0.0)
    with pytest.raises(ValidationError):
        build_simulation(system_from_dict(d))


def test_inner_variables_in_both_numeric_modes():
    inp = build_simulation(load_case("two_bus_machine"))
    x = initialize_simulation(inp)
    inp.rhs(0.0, x)
    plain = inp.inner_variables("gen")
    inp.jacobian(x)
    dual_mode = inp.inner_variables("gen")
    assert plain.keys() == dual_mode.keys()
    for k in plain:
        assert dual_mode[k] == pytest.approx(plain[k], abs=1e-14)
    assert plain["tau_e"] == pytest.approx(plain["tau_m"], abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_index_round_trip(seed):
    inp = build_simulation(load_case("three_bus_mixed"), all_lines_dynamic=True)
    v = np.random.default_rng(seed).standard_normal(inp.n)
    np.testing.assert_array_equal(inp.index.flatten(inp.index.unflatten(v)), v)


# --- perturbations -----------------------------------------------------------------------

def test_islanding_trip_refused():
    inp = build_simulation(load_case("two_bus_machine"))
    x = initialize_simulation(inp)
    with pytest.raises(SingularAlgebraicRestart):
        apply_perturbation(inp, BranchTrip(1.0, "line_1_2"), x)


@pytest.mark.parametrize("dyn", [False, True])
def test_triangle_trip_restamps(dyn):
    inp = build_simulation(load_case("three_bus_inverters"), all_lines_dynamic=dyn)
    x = initialize_simulation(inp)
    apply_perturbation(inp, BranchTrip(1.0, "line_2_3"), x)
    d = case_doc("three_bus_inverters")
    d["branches"] = [b for b in d["branches"] if b["name"] != "line_2_3"]
    reduced = system_from_dict(d)
    dyn_set = {b.name for b in reduced.branches} if dyn else set()
    fresh = build_admittance(reduced, dyn_set).toarray()
    assert np.array_equal(inp.network.Y_a.toarray(), fresh)


def test_reference_change_continuity():
    inp = build_simulation(load_case("three_bus_mixed"))
    x = initialize_simulation(inp)
    k = inp.device("gen1")
    ev = ControlReferenceChange(0.5, "gen1", "P_ref", inp.refs[k]["P_ref"] + 0.05)
    x1 = apply_perturbation(inp, ev, x)
    diff = inp.mass != 0
    assert np.max(np.abs(x1[diff] - x[diff])) == 0.0
    assert np.max(np.abs(inp.rhs(0.0, x1)[~diff])) <= 1e-10


def test_unknown_reference_field():
    inp = build_simulation(load_case("three_bus_mixed"))
    x = initialize_simulation(inp)
    with pytest.raises(KeyError, match="available"):
        apply_perturbation(inp, ControlReferenceChange(0.5, "gen1", "nope", 1.0), x)


def test_generator_trip_freezes_states():
    inp = build_simulation(load_case("three_machine"))
    x = initialize_simulation(inp)
    x1 = apply_perturbation(inp, GeneratorTrip(1.0, "gen2"), x)
    k = inp.device("gen2")
    s, n = inp.starts[k], inp.models[k].n_states
    assert np.all(inp.mass[s:s + n] == 0)
    np.testing.assert_array_equal(x1[s:s + n], x[s:s + n])


def test_load_step_on_unloaded_bus():
    inp = build_simulation(load_case("three_bus_mixed"))
    x = initialize_simulation(inp)
    x1 = apply_perturbation(inp, LoadStep(0.1, 2, 0.05, 0.01), x)
    assert np.max(np.abs(inp.rhs(0.0, x1)[inp.mass == 0])) <= 1e-10


def test_infeasible_restart_is_reported():
    # with inverter currents held, bus 3 cannot absorb the extra constant power
    inp = build_simulation(load_case("three_bus_inverters"))
    x = initialize_simulation(inp)
    with pytest.raises(SingularAlgebraicRestart):
        apply_perturbation(inp, LoadStep(0.5, 3, 0.1, 0.02), x)


def test_perturbation_from_dict():
    p = perturbation_from_dict({"kind": "load_step", "time": 1.0, "bus": 3, "dp": 0.1})
    assert p == LoadStep(1.0, 3, 0.1)


@pytest.mark.parametrize("dyn", [False, True])
def test_power_balance_along_trajectory(dyn):
    inp = build_simulation(load_case("three_bus_mixed"), all_lines_dynamic=dyn)
    x = initialize_simulation(inp)
    k = inp.device("gen1")
    ev = ControlReferenceChange(0.2, "gen1", "P_ref", inp.refs[k]["P_ref"] + 0.05)
    tr = integrate(inp, SolverConfig(max_step=0.02), (0.0, 1.0), x, [ev])
    worst = max(abs(power_balance(inp, row)) for row in tr.states[::5])
    # the EMT network stores energy in its inductors and capacitors
    assert worst <= (1e-6 if not dyn else 5e-3)


# --- custom device through the model hook ----------------------------------------------

@dataclass(frozen=True)
class LinearSpec:
    A: tuple

    def build_model(self, name, bus, omega_b):
        return LinearModel(name, bus, np.array(self.A))


class LinearModel:
    kind = "linear"
    inner_names = ()
    ref_names = ()

    def __init__(self, name, bus, A):
        self.name, self.bus, self.A = name, bus, A
        self.n_states = A.shape[0]
        self.components = [("core", tuple(f"x{k}" for k in range(self.n_states)))]
        self.offsets = {"core": 0}
        self.mass = [1.0] * self.n_states

    def evaluate(self, x, s, vr, vi, refs, f, cache, c, omega_sys, omega_b):
        n = self.n_states
        for i in range(n):
            acc = 0.0
            for j in range(n):
                if self.A[i, j] != 0:
                    acc = acc + self.A[i, j] * x[s + j]
            f[s + i] = acc
        return 0.0, 0.0


def linear_system(A):
    bus = Bus("b1", 1, "reference", 1.0, shunt_b=1.0)
    dev = DynamicDevice("lin", 1, LinearSpec(tuple(map(tuple, A))))
    return SystemModel(100.0, 60.0, (bus,), (), (), (dev,))


def test_linear_device_jacobian_is_exact():
    A = np.array([[-1.0, 2.0, 0.0], [0.5, -3.0, 1.0], [0.0, -0.25, -0.1]])
    inp = build_simulation(linear_system(A))
    x = np.random.default_rng(0).standard_normal(inp.n)
    J = inp.jacobian(x).toarray()
    assert np.array_equal(J[:3, :3], A)
    assert math.isclose(J[3, 4], 1.0) and math.isclose(J[4, 3], -1.0)
