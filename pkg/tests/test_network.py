from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from conftest import single_generator, symmetric_pair, two_bus_case
from gridstab.case import Bus, BusKind, CaseError, Generator, PowerSystemCase
from gridstab.network import ReductionError, SteadyStateNetwork, network_from_case, reduce_network, steady_state_residual
from gridstab.powerflow import solve_power_flow
from gridstab.stability import lyapunov_of


def test_case39_fixed_point(net39):
    assert net39.n == 10
    assert np.all(np.diag(net39.coupling) == 0)
    assert np.all(np.isfinite(net39.coupling)) and np.all(net39.coupling >= 0)
    assert np.max(np.abs(steady_state_residual(net39))) < 1e-6


def test_case39_uniform_damping_is_stable(net39):
    # near the uniform optimum the exponent sits in the -3.87 neighbourhood
    assert lyapunov_of(net39, np.full(10, 7.7489)) == pytest.approx(-3.87, abs=0.05)
    assert lyapunov_of(net39, np.full(10, 7.75)) < 0


def test_symmetric_lossless_pair():
    case = two_bus_case(load_mw=0.0)
    net = network_from_case(case)
    assert np.allclose(net.phase_shift, 0, atol=1e-12)
    assert net.delta_star[0] == pytest.approx(net.delta_star[1], abs=1e-12)
    assert net.coupling[0, 1] == pytest.approx(net.coupling[1, 0])


def test_single_generator_net():
    case = PowerSystemCase(
        buses=(Bus(1, BusKind.SLACK, active_demand=30.0, voltage_magnitude_setpoint=1.0),),
        branches=(),
        generators=(Generator(1, 0.0, 0.0, 4.0, 8.0, 0.3),),
    )
    net = network_from_case(case)
    assert net.coupling.shape == (1, 1) and net.coupling[0, 0] == 0
    assert net.alpha[0] == pytest.approx(0.0, abs=1e-9)


def test_lossless_no_load_case39_has_zero_phase_shift(case39):
    buses = tuple(replace(b, active_demand=0.0, reactive_demand=0.0, shunt_conductance=0.0) for b in case39.buses)
    branches = tuple(replace(b, resistance=0.0) for b in case39.branches)
    gens = tuple(replace(g, active_generation=0.0, reactive_generation=0.0) for g in case39.generators)
    net = network_from_case(replace(case39, buses=buses, branches=branches, generators=gens))
    off = ~np.eye(10, dtype=bool)
    assert np.max(np.abs(net.phase_shift[off])) < 1e-12


def test_inertia_scaling(case39):
    base = network_from_case(case39)
    gens = tuple(replace(g, inertia=2 * g.inertia) for g in case39.generators)
    doubled = network_from_case(replace(case39, generators=gens))
    assert np.allclose(doubled.coupling, base.coupling / 2, rtol=1e-12)
    assert np.allclose(doubled.alpha, base.alpha / 2, rtol=1e-9, atol=1e-12)
    assert np.allclose(doubled.beta, base.beta / 2)


def test_residual_detects_perturbation(net39):
    moved = replace(net39, delta_star=net39.delta_star + np.eye(10)[3] * 0.1)
    r = steady_state_residual(moved)
    assert abs(r[3]) > 1e-3
    neighbours = np.flatnonzero(net39.coupling[3] > 1e-3 * net39.coupling[3].max())
    assert np.all(np.abs(r[neighbours]) > 0)


def test_two_generator_residual_closed_form():
    c, g, d = 3.0, 0.1, 0.4
    net = SteadyStateNetwork(
        alpha=np.array([c * np.sin(d - g), c * np.sin(-d - g)]) + np.array([0.5, -0.25]),
        coupling=np.array([[0, c], [c, 0]]),
        phase_shift=np.array([[0, g], [g, 0]]),
        delta_star=np.array([d, 0.0]),
        beta=np.ones(2),
        internal_emf=np.ones(2),
    )
    assert np.allclose(steady_state_residual(net), [0.5, -0.25])


def test_unconverged_solution_rejected(case39):
    sol = solve_power_flow(case39, max_iterations=1)
    with pytest.raises(ReductionError, match="converge"):
        reduce_network(case39, sol)


def test_missing_dynamics_rejected(case39_raw):
    with pytest.raises(CaseError, match="dynamics"):
        network_from_case(case39_raw)


def test_json_round_trip(net39):
    again = SteadyStateNetwork.from_dict(net39.to_dict())
    assert np.array_equal(again.coupling, net39.coupling)
    assert np.array_equal(again.delta_star, net39.delta_star)


def test_shape_validation():
    with pytest.raises(ValueError):
        SteadyStateNetwork(np.zeros(2), np.zeros((3, 3)), np.zeros((2, 2)), np.zeros(2), np.zeros(2), np.zeros(2))
    assert symmetric_pair().n == 2 and single_generator().n == 1
