"""Bus admittance assembly and Newton-Raphson AC power flow (polar form)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .case import BusKind, CaseError, PowerSystemCase

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 50


class PowerFlowError(RuntimeError):
    """Numerical failure while solving the power flow."""


class SingularJacobianError(PowerFlowError):
    """The Newton mismatch Jacobian is singular (e.g. near voltage collapse)."""


@dataclass
class PowerFlowSolution:
    voltage_magnitude: np.ndarray  # p.u., bus file order
    voltage_angle: np.ndarray  # rad
    slack_active_injection: float  # MW
    converged: bool
    iterations: int
    max_mismatch: float  # p.u.
    gen_active: np.ndarray = field(default_factory=lambda: np.zeros(0))  # MW per generator
    gen_reactive: np.ndarray = field(default_factory=lambda: np.zeros(0))  # MVAr per generator
    mismatch_history: list[float] = field(default_factory=list)

    @property
    def voltage(self) -> np.ndarray:
        return self.voltage_magnitude * np.exp(1j * self.voltage_angle)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "max_mismatch": self.max_mismatch,
            "slack_active_injection": self.slack_active_injection,
            "voltage_magnitude": self.voltage_magnitude.tolist(),
            "voltage_angle": self.voltage_angle.tolist(),
            "gen_active": self.gen_active.tolist(),
            "gen_reactive": self.gen_reactive.tolist(),
            "mismatch_history": list(self.mismatch_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PowerFlowSolution":
        return cls(
            voltage_magnitude=np.asarray(d["voltage_magnitude"], float),
            voltage_angle=np.asarray(d["voltage_angle"], float),
            slack_active_injection=float(d["slack_active_injection"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            max_mismatch=float(d["max_mismatch"]),
            gen_active=np.asarray(d.get("gen_active", []), float),
            gen_reactive=np.asarray(d.get("gen_reactive", []), float),
            mismatch_history=list(d.get("mismatch_history", [])),
        )


def build_admittance(case: PowerSystemCase) -> np.ndarray:
    """Dense complex bus admittance matrix in bus file order (p.u.)."""
    nb = len(case.buses)
    pos = case.bus_index()
    Y = np.zeros((nb, nb), dtype=complex)
    if case.branches:
        br = case.branches
        z = np.array([complex(b.resistance, b.reactance) for b in br])
        if np.any(z == 0):
            k = int(np.flatnonzero(z == 0)[0])
            raise CaseError(f"branch {k} ({br[k].from_bus}-{br[k].to_bus}): zero impedance")
        ys = 1.0 / z
        tap = np.array([b.tap_ratio for b in br]) * np.exp(1j * np.array([b.phase_shift for b in br]))
        ytt = ys + 0.5j * np.array([b.line_charging_susceptance for b in br])
        f = np.array([pos[b.from_bus] for b in br])
        t = np.array([pos[b.to_bus] for b in br])
        np.add.at(Y, (f, f), ytt / (tap * np.conj(tap)))
        np.add.at(Y, (t, t), ytt)
        np.add.at(Y, (f, t), -ys / np.conj(tap))
        np.add.at(Y, (t, f), -ys / tap)
    Y[np.diag_indices(nb)] += np.array([complex(b.shunt_conductance, b.shunt_susceptance) for b in case.buses])
    return Y


def _mismatch_jacobian(Y: np.ndarray, V: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    I = Y @ V
    Vnorm = V / np.abs(V)
    dS_dVm = V[:, None] * np.conj(Y * Vnorm[None, :]) + np.diag(np.conj(I) * Vnorm)
    dS_dVa = 1j * V[:, None] * np.conj(np.diag(I) - Y * V[None, :])
    top = np.hstack([dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]])
    bottom = np.hstack([dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]])
    return np.vstack([top, bottom])


def solve_power_flow(
    case: PowerSystemCase,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    admittance: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Newton-Raphson from a flat start.

    Non-convergence is reported through ``converged=False``; a singular
    mismatch Jacobian raises :class:`SingularJacobianError`.
    """
    Y = build_admittance(case) if admittance is None else admittance
    base = case.base_mva
    pos = case.bus_index()
    kinds = [b.kind for b in case.buses]
    pq = np.array([k for k, kind in enumerate(kinds) if kind == BusKind.PQ], dtype=int)
    pv = np.array([k for k, kind in enumerate(kinds) if kind == BusKind.PV], dtype=int)
    slack = next(k for k, kind in enumerate(kinds) if kind == BusKind.SLACK)
    pvpq = np.concatenate([pv, pq])

    gen_pos = np.array([pos[g.bus] for g in case.generators], dtype=int)
    Pd = np.array([b.active_demand for b in case.buses])
    Qd = np.array([b.reactive_demand for b in case.buses])
    Pg = np.zeros(len(case.buses))
    Qg = np.zeros(len(case.buses))
    for g, k in zip(case.generators, gen_pos):
        Pg[k] += g.active_generation
        Qg[k] += g.reactive_generation
    Sbus = ((Pg - Pd) + 1j * (Qg - Qd)) / base

    Vm = np.ones(len(case.buses))
    for k, b in enumerate(case.buses):
        if b.kind != BusKind.PQ and b.voltage_magnitude_setpoint is not None:
            Vm[k] = b.voltage_magnitude_setpoint
    Va = np.zeros(len(case.buses))
    V = Vm * np.exp(1j * Va)

    history: list[float] = []
    converged = False
    it = 0
    while True:
        mis = V * np.conj(Y @ V) - Sbus
        F = np.concatenate([mis.real[pvpq], mis.imag[pq]])
        norm = float(np.max(np.abs(F))) if F.size else 0.0
        history.append(norm)
        if not np.isfinite(norm):
            break
        if norm <= tolerance:
            converged = True
            break
        if it >= max_iterations:
            break
        J = _mismatch_jacobian(Y, V, pvpq, pq)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular power-flow Jacobian at iteration {it + 1}") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(f"singular power-flow Jacobian at iteration {it + 1}")
        npvpq = len(pvpq)
        Va[pvpq] += dx[:npvpq]
        Vm[pq] += dx[npvpq:]
        V = Vm * np.exp(1j * Va)
        it += 1

    S = V * np.conj(Y @ V) * base
    gen_p = S.real[gen_pos] + Pd[gen_pos]
    gen_q = S.imag[gen_pos] + Qd[gen_pos]
    return PowerFlowSolution(
        voltage_magnitude=Vm.copy(),
        voltage_angle=Va.copy(),
        slack_active_injection=float(S.real[slack]),
        converged=converged,
        iterations=it,
        max_mismatch=history[-1],
        gen_active=gen_p,
        gen_reactive=gen_q,
        mismatch_history=history,
    )
