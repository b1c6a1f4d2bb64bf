"""Linearized swing dynamics: Jacobian assembly and the Lyapunov exponent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .network import SteadyStateNetwork

DEFAULT_ZERO_MODE_TOLERANCE = 1e-8


class StabilityError(RuntimeError):
    """Spectrum is degenerate (zero mode missing or repeated) or eig failed."""


@dataclass
class StabilityJacobian:
    P: np.ndarray  # n x n interaction matrix, 1/s^2
    B: np.ndarray  # n x n diagonal damping matrix, 1/s

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        n = self.n
        return np.block([[np.zeros((n, n)), np.eye(n)], [-self.P, -self.B]])


@dataclass
class LyapunovResult:
    lambda_L: float
    spectrum: np.ndarray
    zero_mode_magnitude: float

    def to_dict(self, with_spectrum: bool = True) -> dict:
        out = {"lambda_L": self.lambda_L, "zero_mode_magnitude": self.zero_mode_magnitude}
        if with_spectrum:
            out["spectrum"] = [[z.real, z.imag] for z in self.spectrum]
        return out


def interaction_matrix(net: SteadyStateNetwork) -> np.ndarray:
    """P_ik = -c_ik cos(δ*_i - δ*_k - γ_ik) off the diagonal, zero row sums."""
    d = net.delta_star[:, None] - net.delta_star[None, :] - net.phase_shift
    P = -net.coupling * np.cos(d)
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, -P.sum(axis=1))
    return P


def assemble_jacobian(net: SteadyStateNetwork, beta) -> StabilityJacobian:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (net.n,):
        raise ValueError(f"beta has length {beta.size}, network has {net.n} generators")
    return StabilityJacobian(P=interaction_matrix(net), B=np.diag(beta))


def _split_zero_mode(ev: np.ndarray, scale: float, tol: float):
    mags = np.abs(ev)
    near = np.flatnonzero(mags <= tol * scale)
    if near.size != 1:
        raise StabilityError(
            f"expected exactly one zero-mode eigenvalue within {tol:g}*|J|, found {near.size}"
        )
    k = near[0]
    return mags[k], np.delete(ev, k)


def lyapunov_exponent(
    jac: StabilityJacobian, zero_mode_tolerance: float = DEFAULT_ZERO_MODE_TOLERANCE
) -> LyapunovResult:
    """Largest real part of the spectrum after removing the rotational zero mode.

    The zero mode is identified by magnitude, ``|λ| <= tol * ||J||_F``.
    """
    J = jac.matrix
    try:
        ev = np.linalg.eigvals(J)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(f"eigensolver failed: {exc}") from exc
    zero, rest = _split_zero_mode(ev, np.linalg.norm(J), zero_mode_tolerance)
    lam = float(rest.real.max()) if rest.size else float("-inf")
    return LyapunovResult(lambda_L=lam, spectrum=ev, zero_mode_magnitude=float(zero))


def lyapunov_batch(P: np.ndarray, betas, zero_mode_tolerance: float = DEFAULT_ZERO_MODE_TOLERANCE) -> np.ndarray:
    """Vectorized λ_L for many damping vectors (and optionally many P).

    ``P`` is (n, n) or (m, n, n); ``betas`` is (m, n). Same zero-mode rule as
    :func:`lyapunov_exponent`.
    """
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    m, n = betas.shape
    J = np.zeros((m, 2 * n, 2 * n))
    J[:, :n, n:] = np.eye(n)
    J[:, n:, :n] = -P
    idx = np.arange(n)
    J[:, n + idx, n + idx] = -betas
    try:
        ev = np.linalg.eigvals(J)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(f"eigensolver failed: {exc}") from exc
    scale = np.linalg.norm(J, axis=(1, 2))
    mags = np.abs(ev)
    near = mags <= zero_mode_tolerance * scale[:, None]
    counts = near.sum(axis=1)
    if np.any(counts != 1):
        bad = int(np.flatnonzero(counts != 1)[0])
        raise StabilityError(
            f"expected exactly one zero-mode eigenvalue, found {counts[bad]} (batch row {bad})"
        )
    re = np.where(near, -np.inf, ev.real)
    return re.max(axis=1)


def qep_spectrum(net: SteadyStateNetwork, beta) -> np.ndarray:
    """Roots of det(λ²I + λB + P) via a symmetric-pencil linearization.

    Independent of :func:`assemble_jacobian`: P is rebuilt from the complex
    form Re(c e^{jθ}) and the generalized problem A z = λ M z is solved with
    A = [[-P, 0], [0, I]], M = [[B, I], [I, 0]].
    """
    beta = np.asarray(beta, dtype=float)
    n = net.n
    if beta.shape != (n,):
        raise ValueError(f"beta has length {beta.size}, network has {n} generators")
    theta = np.subtract.outer(net.delta_star, net.delta_star) - net.phase_shift
    off = -(net.coupling * np.exp(1j * theta)).real
    off[np.diag_indices(n)] = 0.0
    K = off - np.diag(off.sum(axis=1))
    I = np.eye(n)
    Z = np.zeros((n, n))
    A = np.block([[-K, Z], [Z, I]])
    M = np.block([[np.diag(beta), I], [I, Z]])
    try:
        return scipy.linalg.eigvals(A, M)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise StabilityError(f"generalized eigensolver failed: {exc}") from exc


def lyapunov_of(net: SteadyStateNetwork, beta, zero_mode_tolerance: float = DEFAULT_ZERO_MODE_TOLERANCE) -> float:
    return lyapunov_exponent(assemble_jacobian(net, beta), zero_mode_tolerance).lambda_L
