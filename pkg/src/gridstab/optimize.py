"""Damping selection: uniform golden-section search, simulated annealing on the
deterministic exponent, and simulated annealing under uncertainty."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .case import PowerSystemCase
from .network import SteadyStateNetwork
from .stability import interaction_matrix, lyapunov_batch
from .uncertainty import (
    InstanceBank,
    SeededSampler,
    UncertaintySpec,
    gaussian_step,
    hypersphere_step,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NoInteriorMinimum(ValueError):
    """The uniform-damping map is monotone on the search interval."""


class PlanKind(str, Enum):
    UNIFORM = "uniform"
    PER_GENERATOR = "per_generator"
    DISTRIBUTION_MEANS = "distribution_means"


class MoveKind(str, Enum):
    HYPERSPHERE = "hypersphere"
    GAUSSIAN = "gaussian"


@dataclass
class DampingPlan:
    """A damping choice: one scalar (uniform) or one mean per generator."""

    kind: PlanKind
    values: np.ndarray
    n: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = PlanKind(self.kind)
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.kind is PlanKind.UNIFORM:
            if self.values.size != 1:
                raise ValueError("uniform plan holds a single value")
        elif self.values.shape != (self.n,):
            raise ValueError(f"{self.kind.value} plan needs {self.n} values, got {self.values.size}")

    def as_vector(self) -> np.ndarray:
        if self.kind is PlanKind.UNIFORM:
            return np.full(self.n, self.values[0])
        return self.values.copy()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n": self.n,
            "values": self.values.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DampingPlan":
        return cls(PlanKind(d["kind"]), d["values"], int(d["n"]), dict(d.get("provenance", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DampingPlan":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric cooling ``T_{k+1} = c T_k``.

    ``initial_temperature=None`` calibrates T0 so that the median uphill move
    from the starting point is accepted with probability ``target_acceptance``.
    """

    initial_temperature: float | None = None
    cooling: float = 0.98
    steps: int = 2000
    move: MoveKind = MoveKind.HYPERSPHERE
    radius: float = 0.5
    sigma_step: float = 0.5
    lower: float = 0.1
    upper: float = 30.0
    target_acceptance: float = 0.8
    calibration_moves: int = 20

    def __post_init__(self):
        object.__setattr__(self, "move", MoveKind(self.move))
        if not 0 < self.cooling < 1:
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.initial_temperature is not None and not self.initial_temperature > 0:
            raise ValueError("initial temperature must be > 0")
        if not self.upper > self.lower:
            raise ValueError("empty search box")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target acceptance must lie in (0, 1)")
        if self.move is MoveKind.HYPERSPHERE and not self.radius > 0:
            raise ValueError("radius must be > 0")
        if self.sigma_step < 0:
            raise ValueError("sigma_step must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["move"] = self.move.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnnealingSchedule":
        return cls(**d)


@dataclass(frozen=True)
class NoisyObjectiveConfig:
    """Sample count and penalty constants of the noisy objective.

    ``instance_pool`` is the number of perturbed networks precomputed per run;
    each evaluation resamples N of them with replacement.
    """

    samples: int = 100
    b0: float = 0.1
    k: float = 2.0
    beta_noise: bool = True
    y_noise: bool = True
    instance_pool: int = 1000
    confirm_factor: int = 10
    confirm_top: int = 5

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("N must be >= 1")
        if self.b0 < 0:
            raise ValueError("b0 must be >= 0")
        if not self.k > 0:
            raise ValueError("k must be > 0")
        if self.instance_pool < 1 or self.confirm_factor < 1 or self.confirm_top < 1:
            raise ValueError("pool size and confirmation settings must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoisyObjectiveConfig":
        return cls(**d)


@dataclass
class ObjectiveEvaluation:
    mean: float  # r̄₀
    scaled_deviation: float  # σ₀
    penalty: float  # Ψ_E
    objective: float  # Φ_E
    samples: np.ndarray | None = None


def objective_from_samples(samples, temperature: float, b0: float = 0.1, k: float = 2.0) -> ObjectiveEvaluation:
    """Mean plus penalty ``(b0 / k**T) * 2 σ0 / sqrt(N)``, ``σ0 = sqrt(Σ(r - r̄)²) / N``."""
    r = np.asarray(samples, dtype=float)
    if r.size == 0:
        raise ValueError("no samples")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    n = r.size
    mean = float(r.mean())
    sigma0 = math.sqrt(float(np.sum((r - mean) ** 2))) / n
    penalty = (b0 / k**temperature) * (2.0 * sigma0 / math.sqrt(n))
    return ObjectiveEvaluation(mean, sigma0, penalty, mean + penalty, r)


def metropolis_accept(delta_lambda: float, temperature: float, rng: np.random.Generator) -> bool:
    """Downhill always; otherwise with probability exp(-Δ/T).

    One uniform is consumed on every call so the stream position does not
    depend on the sign of Δ.
    """
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    u = rng.random()
    if delta_lambda < 0:
        return True
    return bool(u < math.exp(-delta_lambda / temperature))


def uniform_lyapunov(net: SteadyStateNetwork, beta: float) -> float:
    return float(lyapunov_batch(interaction_matrix(net), np.full((1, net.n), beta))[0])


def optimize_beta_equal(
    net: SteadyStateNetwork, search_interval: tuple[float, float] = (1.0, 30.0), tolerance: float = 1e-4
) -> DampingPlan:
    """Golden-section search for the uniform β minimizing λ_L."""
    a, b = map(float, search_interval)
    if not b > a or not tolerance > 0:
        raise ValueError("need a < b and tolerance > 0")
    P = interaction_matrix(net)

    def f(beta):
        return float(lyapunov_batch(P, np.full((1, net.n), beta))[0])

    fa, fb = f(a), f(b)
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    lo, hi = a, b
    while hi - lo > tolerance:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    best = 0.5 * (lo + hi)
    fbest = f(best)
    edge = 2 * tolerance
    if not (fbest < fa and fbest < fb) or best - a < edge or b - best < edge:
        raise NoInteriorMinimum(f"no interior minimum of λ_L(β) on [{a:g}, {b:g}]")
    return DampingPlan(
        PlanKind.UNIFORM,
        [best],
        net.n,
        {"method": "equal", "interval": [a, b], "tolerance": tolerance, "lambda_L": fbest},
    )


def reflect_into(x: np.ndarray, lower: float, upper: float) -> np.ndarray:
    """Mirror coordinates back into [lower, upper] (repeatedly if needed)."""
    width = upper - lower
    y = np.mod(x - lower, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    return lower + y


@dataclass
class AnnealingResult:
    best: np.ndarray
    best_value: float
    initial_value: float
    initial_temperature: float
    history: list[dict]
    archive: list[tuple[float, np.ndarray]]


def _propose(x: np.ndarray, schedule: AnnealingSchedule, rng: np.random.Generator) -> np.ndarray:
    if schedule.move is MoveKind.HYPERSPHERE:
        eps = hypersphere_step(x.size, schedule.radius, rng)
    else:
        eps = gaussian_step(x.size, schedule.sigma_step, rng)
    return reflect_into(x + eps, schedule.lower, schedule.upper)


def _calibrate_temperature(
    x0: np.ndarray, f0: float, objective: Callable, schedule: AnnealingSchedule, sampler: SeededSampler
) -> float:
    uphill = []
    for m in range(schedule.calibration_moves):
        cand = _propose(x0, schedule, sampler.rng("sa-calibrate-move", m))
        delta = objective(cand, ("calibrate", m), 1.0) - f0
        if delta > 0:
            uphill.append(delta)
    if not uphill:
        return 1.0
    return float(np.median(uphill)) / math.log(1.0 / schedule.target_acceptance)


def _anneal(
    x0: np.ndarray,
    objective: Callable[[np.ndarray, tuple, float], float],
    schedule: AnnealingSchedule,
    sampler: SeededSampler,
    archive_size: int = 1,
) -> AnnealingResult:
    """Shared SA core. ``objective(x, tag, T)`` must be pure given ``tag``.

    Step 0 is the starting point, so ``steps=1`` returns it unchanged.
    """
    x = reflect_into(np.asarray(x0, dtype=float), schedule.lower, schedule.upper)
    T = schedule.initial_temperature
    fx = objective(x, ("step", 0), 1.0 if T is None else T)
    if T is None:
        T = _calibrate_temperature(x, fx, objective, schedule, sampler)
    T0 = T
    f0 = fx
    best, fbest = x.copy(), fx
    archive = [(fx, x.copy())]
    history = [{"step": 0, "temperature": T, "current": fx, "best": fbest, "accepted": True}]
    for k in range(1, schedule.steps):
        cand = _propose(x, schedule, sampler.rng("sa-move", k))
        fc = objective(cand, ("step", k), T)
        accepted = metropolis_accept(fc - fx, T, sampler.rng("sa-accept", k))
        if accepted:
            x, fx = cand, fc
            if fx < fbest:
                best, fbest = x.copy(), fx
            archive.append((fx, x.copy()))
            archive.sort(key=lambda item: item[0])
            del archive[archive_size:]
        history.append({"step": k, "temperature": T, "current": fx, "best": fbest, "accepted": accepted})
        T *= schedule.cooling
    return AnnealingResult(best, fbest, f0, T0, history, archive)


def _default_start(net: SteadyStateNetwork, initial, schedule: AnnealingSchedule, sampler: SeededSampler) -> np.ndarray:
    """Explicit start, or a uniform draw from the search box.

    Independent random starts let seeded restarts explore different basins;
    the uniform optimum sits on a non-smooth kink that traps most chains.
    """
    if initial is None:
        return sampler.rng("sa-start", 0).uniform(schedule.lower, schedule.upper, net.n)
    if isinstance(initial, DampingPlan):
        return initial.as_vector()
    x = np.asarray(initial, dtype=float)
    if x.shape != (net.n,):
        raise ValueError(f"initial point needs {net.n} values")
    return x


def optimize_beta_distinct(
    net: SteadyStateNetwork,
    schedule: AnnealingSchedule = AnnealingSchedule(),
    sampler: SeededSampler = SeededSampler(0),
    initial=None,
    return_result: bool = False,
):
    """Simulated annealing on λ_L of the unperturbed network; returns the best visited plan."""
    P = interaction_matrix(net)
    x0 = _default_start(net, initial, schedule, sampler)

    def objective(x, tag, T):
        return float(lyapunov_batch(P, x[None, :])[0])

    res = _anneal(x0, objective, schedule, sampler)
    plan = DampingPlan(
        PlanKind.PER_GENERATOR,
        res.best,
        net.n,
        {
            "method": "distinct",
            "seed": sampler.root_seed,
            "schedule": schedule.to_dict(),
            "lambda_L": res.best_value,
            "initial_lambda_L": res.initial_value,
            "initial_temperature": res.initial_temperature,
        },
    )
    return (plan, res) if return_result else plan


class NoisyObjective:
    """Φ_E evaluator over a fixed pool of perturbed interaction matrices.

    The pool is drawn once from the raw-parameter channel; each evaluation
    resamples N pool members and N damping vectors from its own stream.
    """

    def __init__(
        self,
        base: SteadyStateNetwork,
        config: NoisyObjectiveConfig,
        beta_sigma: float,
        pool: np.ndarray | None = None,
        nonconvergent: int = 0,
    ):
        self.config = config
        self.beta_sigma = float(beta_sigma) if config.beta_noise else 0.0
        self.base = base
        self.n = base.n
        if pool is None or not config.y_noise:
            pool = interaction_matrix(base)[None, :, :]
        if pool.shape[0] == 0:
            raise ValueError("all perturbed instances failed to converge")
        self.pool = pool
        self.nonconvergent = nonconvergent

    @classmethod
    def from_case(
        cls,
        case: PowerSystemCase,
        spec: UncertaintySpec,
        config: NoisyObjectiveConfig,
        sampler: SeededSampler,
        base: SteadyStateNetwork | None = None,
        bank: InstanceBank | None = None,
        jobs: int = 1,
    ) -> "NoisyObjective":
        bank = bank or InstanceBank(case, spec, sampler, base)
        base = bank.base()
        pool, bad = None, 0
        if config.y_noise and spec.has_parameter_noise:
            nets = bank.networks(range(config.instance_pool), jobs=jobs)
            good = [interaction_matrix(n) for n in nets if n is not None]
            bad = len(nets) - len(good)
            pool = np.stack(good) if good else np.zeros((0, base.n, base.n))
        return cls(base, config, spec.beta_sigma, pool, bad)

    def sample(self, beta: np.ndarray, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.pool.shape[0] == 1:
            P = self.pool[0]
        else:
            P = self.pool[rng.integers(0, self.pool.shape[0], size=count)]
        if self.beta_sigma > 0:
            betas = rng.normal(beta, self.beta_sigma, size=(count, self.n))
        else:
            betas = np.broadcast_to(beta, (count, self.n))
        return lyapunov_batch(P, betas)

    def evaluate(self, beta, rng: np.random.Generator, temperature: float, count: int | None = None) -> ObjectiveEvaluation:
        count = self.config.samples if count is None else count
        r = self.sample(np.asarray(beta, dtype=float), rng, count)
        return objective_from_samples(r, temperature, self.config.b0, self.config.k)


def evaluate_noisy_objective(
    net_or_case,
    plan,
    config: NoisyObjectiveConfig,
    spec: UncertaintySpec,
    sampler: SeededSampler,
    temperature: float,
    index: int = 0,
) -> ObjectiveEvaluation:
    """One Φ_E evaluation of ``plan`` with draws from stream ``("objective", index)``."""
    if isinstance(net_or_case, PowerSystemCase):
        obj = NoisyObjective.from_case(net_or_case, spec, config, sampler)
    else:
        obj = NoisyObjective(net_or_case, config, spec.beta_sigma)
    beta = plan.as_vector() if isinstance(plan, DampingPlan) else np.asarray(plan, dtype=float)
    return obj.evaluate(beta, sampler.rng("objective", index), temperature)


def optimize_beta_uncertain(
    case_or_objective,
    spec: UncertaintySpec | None = None,
    config: NoisyObjectiveConfig = NoisyObjectiveConfig(),
    schedule: AnnealingSchedule = AnnealingSchedule(),
    sampler: SeededSampler = SeededSampler(0),
    initial=None,
    jobs: int = 1,
    return_result: bool = False,
):
    """Simulated annealing on Φ_E over distribution means.

    The top archived candidates are re-evaluated with ``confirm_factor * N``
    samples on a common stream and the lowest confirmed Φ_E wins.
    """
    if isinstance(case_or_objective, NoisyObjective):
        obj = case_or_objective
    else:
        if spec is None:
            raise ValueError("an uncertainty spec is required")
        obj = NoisyObjective.from_case(case_or_objective, spec, config, sampler, jobs=jobs)
    cfg = obj.config
    x0 = _default_start(obj.base, initial, schedule, sampler)

    def objective(x, tag, T):
        kind, k = tag
        return obj.evaluate(x, sampler.rng(f"sa-eval-{kind}", k), T).objective

    res = _anneal(x0, objective, schedule, sampler, archive_size=cfg.confirm_top)
    confirmed = []
    for value, x in res.archive:
        ev = obj.evaluate(x, sampler.rng("sa-confirm", 0), 1.0, count=cfg.samples * cfg.confirm_factor)
        confirmed.append((ev.objective, value, x))
    confirmed.sort(key=lambda item: item[0])
    best_confirmed, best_archived, best_x = confirmed[0]
    plan = DampingPlan(
        PlanKind.DISTRIBUTION_MEANS,
        best_x,
        obj.n,
        {
            "method": "uncertain",
            "seed": sampler.root_seed,
            "schedule": schedule.to_dict(),
            "objective": cfg.to_dict(),
            "beta_sigma": obj.beta_sigma,
            "phi_archived": best_archived,
            "phi_confirmed": best_confirmed,
            "initial_phi": res.initial_value,
            "initial_temperature": res.initial_temperature,
            "nonconvergent_pool": obj.nonconvergent,
        },
    )
    return (plan, res) if return_result else plan
