import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from conftest import case_doc
from gridwave import load_case
from gridwave.errors import EigenSolverFailure, SingularRy
from gridwave.linearization import (LinearizedModel, damping_ratio, eigenanalysis,
                                    frequency_hz, linearize, partition, reduce_jacobian,
                                    small_signal)
from gridwave.simulation import build_simulation, initialize_simulation
from gridwave.solvers import SolverConfig, integrate
from gridwave.system import system_from_dict


def _omib(D=0.0):
    d = case_doc("omib")
    d["devices"][1]["generator"]["shaft"]["D"] = D
    inp = build_simulation(system_from_dict(d))
    return inp, initialize_simulation(inp)


@pytest.mark.parametrize("D", [0.0, 1.5])
def test_classical_machine_block(D):
    inp, x = _omib(D)
    lin = linearize(inp, x)
    H, wb = 3.0, inp.omega_b
    delta0 = math.radians(30.0)
    assert x[inp.index["gen.shaft.delta"]] == pytest.approx(delta0, abs=1e-9)
    K = 1.0 * 1.0 * math.cos(delta0) / 0.5
    expected = np.array([[0.0, wb], [-K / (2 * H), -D / (2 * H)]])
    np.testing.assert_allclose(lin.J_red, expected, rtol=0, atol=1e-8)
    assert lin.differential_names == ("gen.shaft.delta", "gen.shaft.omega")


def test_schur_complement_scalar():
    lin = partition(np.array([[-1.0, 1.0], [1.0, -2.0]]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(reduce_jacobian(lin), [[-0.5]])


def test_no_algebraic_states():
    J = np.array([[-1.0, 2.0], [0.5, -3.0]])
    lin = partition(J, np.ones(2))
    np.testing.assert_array_equal(reduce_jacobian(lin), J)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 5), st.integers(1, 4))
def test_reduced_spectrum_matches_pencil(seed, nd, na):
    rng = np.random.default_rng(seed)
    n = nd + na
    J = rng.standard_normal((n, n))
    J[nd:, nd:] += 3 * np.eye(na) * np.sign(rng.standard_normal())
    if np.linalg.cond(J[nd:, nd:]) > 1e6:
        return
    mass = np.concatenate([rng.uniform(0.1, 2.0, nd), np.zeros(na)])
    lam = np.linalg.eigvals(reduce_jacobian(partition(J, mass)))
    gen = sla.eigvals(J, np.diag(mass))
    gen = gen[np.isfinite(gen)]
    assert len(gen) == nd
    for g in gen:
        assert np.min(np.abs(lam - g)) <= 1e-8 * max(1.0, abs(g))


def test_singular_algebraic_block():
    J = np.array([[-1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    lin = partition(J, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(SingularRy) as exc:
        reduce_jacobian(lin)
    assert exc.value.condition > 1e12


def test_damping_values():
    assert damping_ratio(0.5381 - 2.7415j) == pytest.approx(-19.26, abs=0.01)
    assert damping_ratio(-37.2633) == pytest.approx(100.0, abs=0.01)
    assert damping_ratio(2.0) == -100.0
    assert damping_ratio(0.0) == 100.0


def test_pure_oscillator():
    rep = eigenanalysis(np.array([[0.0, 1.0], [-4.0, 0.0]]), ["a", "b"])
    np.testing.assert_allclose(sorted(rep.eigenvalues.imag), [-2.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(rep.damping, 0.0, atol=1e-12)
    np.testing.assert_allclose(rep.frequency, 1 / math.pi, rtol=1e-12)
    assert frequency_hz(-2j) == pytest.approx(1 / math.pi)


def test_report_sorted_and_conjugate_symmetric():
    inp = build_simulation(load_case("three_bus_mixed"))
    x = initialize_simulation(inp)
    _, rep = small_signal(inp, x)
    re = rep.eigenvalues.real
    assert np.all(np.diff(re) <= 1e-9)
    lam = rep.eigenvalues
    for l in lam[np.abs(lam.imag) > 1e-9]:
        assert np.min(np.abs(lam - np.conj(l))) <= 1e-8 * max(1.0, abs(l))
    assert np.all((rep.damping >= -100) & (rep.damping <= 100))
    assert len(rep.dominant) == len(lam) and all(n in inp.names for n in rep.dominant)


def test_non_finite_rejected():
    with pytest.raises(EigenSolverFailure):
        eigenanalysis(np.array([[np.nan]]))


def test_partition_sizes():
    inp = build_simulation(load_case("three_bus_inverters"), all_lines_dynamic=True)
    x = initialize_simulation(inp)
    lin = linearize(inp, x)
    assert isinstance(lin, LinearizedModel)
    assert lin.differential.size + lin.algebraic.size == inp.n
    assert lin.J_red.shape == (lin.differential.size,) * 2


@pytest.mark.parametrize("D,grows", [(2.0, False), (-2.0, True)])
def test_spectrum_sign_matches_trajectory(D, grows):
    inp, x = _omib(D)
    _, rep = small_signal(inp, x)
    assert rep.stable != grows
    x1 = x.copy()
    x1[inp.index["gen.shaft.omega"]] += 1e-4
    tr = integrate(inp, SolverConfig(abstol=1e-10, reltol=1e-10, max_step=0.01), (0.0, 6.0), x1)
    w = tr.signal("gen.shaft.omega") - 1.0
    early = np.max(np.abs(w[tr.times < 1.0]))
    late = np.max(np.abs(w[tr.times > 5.0]))
    assert (late > early) == grows
