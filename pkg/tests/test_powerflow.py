from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import CASE39, DATA, two_bus_case
from gridstab.case import Bus, BusKind, CaseError, PowerSystemCase, load_case
from gridstab.powerflow import PowerFlowSolution, SingularJacobianError, build_admittance, solve_power_flow

GOLDEN = json.loads((DATA / "pypower_golden.json").read_text())
CASES = {"case9": DATA / "case9.m", "case14": DATA / "case14.m", "case39": CASE39}


def test_single_branch_stamp():
    Y = build_admittance(two_bus_case(x=0.1))
    assert np.allclose(Y, [[-10j, 10j], [10j, -10j]])


def test_empty_branches_give_shunt_diagonal():
    case = PowerSystemCase(
        buses=(Bus(1, BusKind.SLACK, voltage_magnitude_setpoint=1.0, shunt_susceptance=0.2), Bus(2, BusKind.PQ, shunt_conductance=0.1)),
        branches=(),
        generators=(),
    )
    assert np.array_equal(build_admittance(case), np.diag([0.2j, 0.1 + 0j]))


@pytest.mark.parametrize("name", sorted(CASES))
def test_admittance_matches_reference(name):
    Y = build_admittance(load_case(CASES[name]))
    ref = np.array(GOLDEN[name]["ybus_real"]) + 1j * np.array(GOLDEN[name]["ybus_imag"])
    assert np.max(np.abs(Y - ref)) < 1e-9


def test_case39_sparsity(case39_raw):
    Y = build_admittance(case39_raw)
    off = np.count_nonzero(Y - np.diag(np.diag(Y)))
    assert off == 2 * 46
    assert np.allclose(Y, Y.T)


@pytest.mark.parametrize("name", sorted(CASES))
def test_power_flow_matches_reference(name):
    sol = solve_power_flow(load_case(CASES[name]))
    ref = GOLDEN[name]
    assert sol.converged and sol.max_mismatch < 1e-8
    assert np.max(np.abs(sol.voltage_magnitude - ref["vm"])) < 1e-6
    assert np.max(np.abs(np.degrees(sol.voltage_angle) - ref["va_deg"])) < 1e-6
    assert np.max(np.abs(sol.gen_active - ref["gen_p"])) < 1e-6
    assert np.max(np.abs(sol.gen_reactive - ref["gen_q"])) < 1e-6


def test_two_bus_sine_flow():
    sol = solve_power_flow(two_bus_case(load_mw=50.0))
    assert sol.converged
    assert sol.voltage_angle[1] == pytest.approx(np.arcsin(-0.05), abs=1e-10)
    assert sol.slack_active_injection == pytest.approx(50.0, abs=1e-6)


def test_flat_network_needs_no_iterations():
    sol = solve_power_flow(two_bus_case(load_mw=0.0))
    assert sol.converged and sol.iterations == 0
    assert np.all(sol.voltage_angle == 0)


def test_slack_angle_zero_and_conservation(case39_raw):
    sol = solve_power_flow(case39_raw)
    slack = [k for k, b in enumerate(case39_raw.buses) if b.kind == BusKind.SLACK][0]
    assert sol.voltage_angle[slack] == 0
    V = sol.voltage
    Y = build_admittance(case39_raw)
    losses = 0.0
    pos = case39_raw.bus_index()
    for br in case39_raw.branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1 / complex(br.resistance, br.reactance)
        tap = br.tap_ratio * np.exp(1j * br.phase_shift)
        i_f = (ys + 0.5j * br.line_charging_susceptance) / abs(tap) ** 2 * V[f] - ys / np.conj(tap) * V[t]
        i_t = -ys / tap * V[f] + (ys + 0.5j * br.line_charging_susceptance) * V[t]
        losses += (V[f] * np.conj(i_f) + V[t] * np.conj(i_t)).real * case39_raw.base_mva
    demand = sum(b.active_demand for b in case39_raw.buses)
    assert sol.gen_active.sum() == pytest.approx(demand + losses, abs=1e-5)
    assert Y.shape == (39, 39)


def test_mismatch_history_monotone_at_end(case39_raw):
    sol = solve_power_flow(case39_raw)
    h = sol.mismatch_history
    assert h[-1] <= h[-2] <= h[-3]


def test_deterministic(case39_raw):
    a, b = solve_power_flow(case39_raw), solve_power_flow(case39_raw)
    assert np.array_equal(a.voltage_angle, b.voltage_angle)
    assert np.array_equal(a.voltage_magnitude, b.voltage_magnitude)


def test_nonconvergence_is_reported():
    sol = solve_power_flow(two_bus_case(load_mw=2000.0), max_iterations=10)
    assert not sol.converged
    assert sol.iterations <= 10


def test_singular_jacobian_raises():
    case = PowerSystemCase(
        buses=(Bus(1, BusKind.SLACK, voltage_magnitude_setpoint=1.0), Bus(2, BusKind.PQ, active_demand=10.0), Bus(3, BusKind.PQ)),
        branches=(two_bus_case().branches[0],),
        generators=(),
    )
    with pytest.raises(SingularJacobianError):
        solve_power_flow(case)


def test_solution_json_round_trip(case39_raw):
    sol = solve_power_flow(case39_raw)
    again = PowerFlowSolution.from_dict(json.loads(json.dumps(sol.to_dict())))
    assert np.array_equal(again.voltage_angle, sol.voltage_angle)
    assert again.converged
