"""Gaussian uncertainty on raw system parameters and damping, with
counter-based seeding so draw ``j`` never depends on draws ``0..j-1``."""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .case import PowerSystemCase, parse_key
from .network import ReductionError, SteadyStateNetwork, reduce_network
from .powerflow import PowerFlowError, build_admittance, solve_power_flow


@dataclass(frozen=True)
class UncertaintySpec:
    """Standard deviations for the raw-parameter channel and the damping channel.

    ``parameters`` maps ``kind:index:field`` keys (see :mod:`gridstab.case`) to
    absolute standard deviations in the field's own units; ``beta_sigma`` is
    the common absolute standard deviation of damping noise (1/s).
    """

    parameters: dict[str, float] = field(default_factory=dict)
    beta_sigma: float = 0.0

    def __post_init__(self):
        if self.beta_sigma < 0:
            raise ValueError("beta_sigma must be >= 0")
        for key, s in self.parameters.items():
            parse_key(key)
            if not s >= 0:
                raise ValueError(f"standard deviation for {key} must be >= 0")

    def with_beta_sigma(self, sigma: float) -> "UncertaintySpec":
        return UncertaintySpec(parameters=dict(self.parameters), beta_sigma=float(sigma))

    def without_parameters(self) -> "UncertaintySpec":
        return UncertaintySpec(parameters={}, beta_sigma=self.beta_sigma)

    @property
    def has_parameter_noise(self) -> bool:
        return any(s > 0 for s in self.parameters.values())

    def to_dict(self) -> dict:
        return {"beta_sigma": self.beta_sigma, "parameters": dict(sorted(self.parameters.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintySpec":
        return cls(
            parameters={k: float(v) for k, v in d.get("parameters", {}).items()},
            beta_sigma=float(d.get("beta_sigma", 0.0)),
        )


def _channel_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed(root_seed: int, *labels) -> int:
    """Stable 63-bit child seed for a labelled pipeline stage."""
    key = tuple(_channel_id(str(label)) for label in labels)
    seq = np.random.SeedSequence(root_seed, spawn_key=key)
    return int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SeededSampler:
    """Derives an independent generator for every (channel tag, draw index)."""

    root_seed: int

    def rng(self, channel: str, index: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.root_seed, spawn_key=(_channel_id(channel), int(index)))
        return np.random.Generator(np.random.PCG64(seq))


@dataclass
class PerturbedInstance:
    index: int
    case: PowerSystemCase
    network: SteadyStateNetwork | None
    converged: bool
    error: str | None = None


def perturbed_values(case: PowerSystemCase, spec: UncertaintySpec, rng: np.random.Generator) -> dict[str, float]:
    keys = sorted(spec.parameters)
    sig = np.array([spec.parameters[k] for k in keys])
    means = np.array(case.raw_values(keys), dtype=float)
    draws = rng.normal(means, sig) if keys else means
    return dict(zip(keys, draws.tolist()))


def sample_instance(case: PowerSystemCase, spec: UncertaintySpec, sampler: SeededSampler, j: int, **pf_kwargs) -> PerturbedInstance:
    """Draw every raw parameter from N(mean, sd), re-solve and re-reduce.

    A failed power flow or reduction is flagged on the instance, never replaced.
    """
    values = perturbed_values(case, spec, sampler.rng("y", j))
    inst_case = case.with_values(values) if values else case
    try:
        Y = build_admittance(inst_case)
        sol = solve_power_flow(inst_case, admittance=Y, **pf_kwargs)
        if not sol.converged:
            return PerturbedInstance(j, inst_case, None, False, f"no convergence, mismatch {sol.max_mismatch:.3e}")
        net = reduce_network(inst_case, sol, admittance=Y)
    except (PowerFlowError, ReductionError) as exc:
        return PerturbedInstance(j, inst_case, None, False, str(exc))
    return PerturbedInstance(j, inst_case, net, True)


def sample_beta(mean_beta, sigma: float, sampler: SeededSampler, j: int) -> np.ndarray:
    """Independent N(mean_i, sigma) draws; negative values are kept as drawn."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    mean_beta = np.asarray(mean_beta, dtype=float)
    if sigma == 0:
        return mean_beta.copy()
    return sampler.rng("beta", j).normal(mean_beta, sigma)


def sample_beta_block(mean_beta, sigma: float, sampler: SeededSampler, indices) -> np.ndarray:
    return np.stack([sample_beta(mean_beta, sigma, sampler, j) for j in indices])


def hypersphere_step(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform random point on the sphere of the given radius (normalized Gaussian)."""
    if n < 1 or not radius > 0:
        raise ValueError("need n >= 1 and radius > 0")
    while True:
        g = rng.standard_normal(n)
        norm = np.sqrt(np.sum(g * g))
        if norm > 0:
            return radius * (g / norm)


def gaussian_step(n: int, sigma_step: float, rng: np.random.Generator) -> np.ndarray:
    if sigma_step < 0:
        raise ValueError("sigma_step must be >= 0")
    if sigma_step == 0:
        return np.zeros(n)
    return rng.normal(0.0, sigma_step, n)


def _instance_networks(args):
    case, spec, root_seed, indices = args
    sampler = SeededSampler(root_seed)
    out = []
    for j in indices:
        inst = sample_instance(case, spec, sampler, j)
        out.append((j, inst.network))
    return out


class InstanceBank:
    """Memoized perturbed networks for one (case, raw-parameter spec, seed).

    The raw-parameter channel does not depend on the damping plan, so every
    plan tested with the same seed sees the same perturbed instances.
    """

    def __init__(self, case: PowerSystemCase, spec: UncertaintySpec, sampler: SeededSampler, base: SteadyStateNetwork | None = None):
        self.case = case
        self.spec = UncertaintySpec(dict(spec.parameters), 0.0)
        self.sampler = sampler
        self._nets: dict[int, SteadyStateNetwork | None] = {}
        self._base = base

    def base(self) -> SteadyStateNetwork:
        if self._base is None:
            inst = sample_instance(self.case, UncertaintySpec(), self.sampler, 0)
            if not inst.converged:
                raise ReductionError(f"base case failed: {inst.error}")
            self._base = inst.network
        return self._base

    def networks(self, indices, jobs: int = 1) -> list[SteadyStateNetwork | None]:
        indices = list(indices)
        if not self.spec.has_parameter_noise:
            return [self.base()] * len(indices)
        todo = [j for j in indices if j not in self._nets]
        if todo:
            if jobs > 1 and len(todo) > 4 * jobs:
                chunks = [todo[k::jobs] for k in range(jobs)]
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    results = pool.map(
                        _instance_networks, [(self.case, self.spec, self.sampler.root_seed, c) for c in chunks]
                    )
                    for part in results:
                        for j, net in part:
                            self._nets[j] = net
            else:
                for j, net in _instance_networks((self.case, self.spec, self.sampler.root_seed, todo)):
                    self._nets[j] = net
        return [self._nets[j] for j in indices]
