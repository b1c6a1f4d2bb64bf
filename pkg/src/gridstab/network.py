"""Effective generator network via constant-impedance loads and Kron reduction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case import CaseError, PowerSystemCase
from .powerflow import PowerFlowSolution, build_admittance


class ReductionError(RuntimeError):
    """Kron reduction failed (singular interior block, missing dynamics...)."""


@dataclass
class SteadyStateNetwork:
    """Parameters of the normalized swing equation for each generator.

    ``alpha`` and ``coupling`` are in 1/s^2 (the ω_R/(2H_i) prefactor is folded
    in), ``beta`` in 1/s, angles in radians.
    """

    alpha: np.ndarray
    coupling: np.ndarray
    phase_shift: np.ndarray
    delta_star: np.ndarray
    beta: np.ndarray
    internal_emf: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "coupling", "phase_shift", "delta_star", "beta", "internal_emf"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.n
        if self.coupling.shape != (n, n) or self.phase_shift.shape != (n, n):
            raise ValueError("coupling and phase_shift must be n x n")
        for name in ("delta_star", "beta", "internal_emf"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha.tolist(),
            "coupling": self.coupling.tolist(),
            "phase_shift": self.phase_shift.tolist(),
            "delta_star": self.delta_star.tolist(),
            "beta": self.beta.tolist(),
            "internal_emf": self.internal_emf.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SteadyStateNetwork":
        n = int(d["n"])
        return cls(
            alpha=d["alpha"],
            coupling=np.asarray(d["coupling"], float).reshape(n, n),
            phase_shift=np.asarray(d["phase_shift"], float).reshape(n, n),
            delta_star=d["delta_star"],
            beta=d["beta"],
            internal_emf=d["internal_emf"],
        )


def reduce_network(
    case: PowerSystemCase, solution: PowerFlowSolution, admittance: np.ndarray | None = None
) -> SteadyStateNetwork:
    if not solution.converged:
        raise ReductionError("power-flow solution did not converge")
    if not case.has_dynamics:
        raise CaseError("generator dynamics (H, D, x'_d) are required")
    gens = case.generators
    ng, nb = len(gens), len(case.buses)
    pos = case.bus_index()
    gpos = np.array([pos[g.bus] for g in gens], dtype=int)
    xd = np.array([g.transient_reactance for g in gens], dtype=float)
    if np.any(xd == 0):
        raise ReductionError("zero transient reactance")
    H = np.array([g.inertia for g in gens], dtype=float)
    beta = np.array([g.effective_damping for g in gens], dtype=float)

    V = solution.voltage
    base = case.base_mva
    Pd = np.array([b.active_demand for b in case.buses]) / base
    Qd = np.array([b.reactive_demand for b in case.buses]) / base

    # loads as constant admittances at the solved voltages
    Y = build_admittance(case) if admittance is None else admittance
    Ybus = Y + np.diag((Pd - 1j * Qd) / np.abs(V) ** 2)

    Pg = solution.gen_active / base
    Qg = solution.gen_reactive / base
    Ig = np.conj((Pg + 1j * Qg) / V[gpos])
    E = V[gpos] + 1j * xd * Ig

    # augmented network: internal nodes behind x'_d
    yg = 1.0 / (1j * xd)
    Ygg = np.diag(yg)
    Ygb = np.zeros((ng, nb), dtype=complex)
    Ygb[np.arange(ng), gpos] = -yg
    Ybb = Ybus.copy()
    Ybb[gpos, gpos] += yg
    try:
        Yred = Ygg - Ygb @ np.linalg.solve(Ybb, Ygb.T)
    except np.linalg.LinAlgError as exc:
        raise ReductionError("singular interior admittance block in Kron reduction") from exc
    if not np.all(np.isfinite(Yred)):
        raise ReductionError("singular interior admittance block in Kron reduction")

    omega_r = 2.0 * np.pi * case.nominal_frequency
    scale = omega_r / (2.0 * H)
    Emag = np.abs(E)
    coupling = scale[:, None] * np.outer(Emag, Emag) * np.abs(Yred)
    np.fill_diagonal(coupling, 0.0)
    phase = np.angle(Yred) - np.pi / 2
    phase = (phase + np.pi) % (2 * np.pi) - np.pi
    np.fill_diagonal(phase, 0.0)
    alpha = scale * (Pg - Emag**2 * Yred.real.diagonal())
    return SteadyStateNetwork(
        alpha=alpha,
        coupling=coupling,
        phase_shift=phase,
        delta_star=np.angle(E),
        beta=beta,
        internal_emf=Emag,
    )


def steady_state_residual(net: SteadyStateNetwork) -> np.ndarray:
    """alpha_i - sum_k c_ik sin(δ*_i - δ*_k - γ_ik); zero at a synchronous state."""
    d = net.delta_star[:, None] - net.delta_star[None, :] - net.phase_shift
    terms = net.coupling * np.sin(d)
    np.fill_diagonal(terms, 0.0)
    return net.alpha - terms.sum(axis=1)


def network_from_case(case: PowerSystemCase, **pf_kwargs) -> SteadyStateNetwork:
    """Solve the power flow and reduce; raises if the flow does not converge."""
    from .powerflow import solve_power_flow

    sol = solve_power_flow(case, **pf_kwargs)
    if not sol.converged:
        raise ReductionError(
            f"power flow did not converge (max mismatch {sol.max_mismatch:.3e} after {sol.iterations} iterations)"
        )
    return reduce_network(case, sol)

