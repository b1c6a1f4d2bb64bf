"""Monte Carlo testing of damping plans: λ_L distributions, quantile curves,
critical values and comparison reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .case import PowerSystemCase
from .optimize import DampingPlan
from .stability import interaction_matrix, lyapunov_batch
from .uncertainty import InstanceBank, SeededSampler, UncertaintySpec, sample_beta

DEFAULT_GRID = tuple(range(10, 100, 10))
CRITICAL_PERCENTS = (95, 96, 97, 98, 99)
MIN_CRITICAL_SAMPLES = 100
BATCH = 1000


class Channels(str, Enum):
    FULL = "full"
    BETA_ONLY = "beta_only"
    Y_ONLY = "y_only"

    @classmethod
    def parse(cls, text: str) -> "Channels":
        aliases = {"beta": cls.BETA_ONLY, "y": cls.Y_ONLY}
        return aliases.get(text) or cls(text)

    @property
    def beta(self) -> bool:
        return self is not Channels.Y_ONLY

    @property
    def y(self) -> bool:
        return self is not Channels.BETA_ONLY


class AnalysisError(ValueError):
    """Empty or inconsistent inputs to a statistical summary."""


@dataclass
class LyapunovDistribution:
    samples: np.ndarray
    requested: int
    nonconvergent: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.size + self.nonconvergent != self.requested:
            raise AnalysisError("samples + non-convergent draws must equal requested draws")
        if not np.all(np.isfinite(self.samples)):
            raise AnalysisError("non-finite λ_L samples")

    @property
    def nonconvergent_fraction(self) -> float:
        return self.nonconvergent / self.requested if self.requested else 0.0

    def to_csv(self) -> str:
        return "".join(f"{x!r}\n" for x in self.samples.tolist())


@dataclass
class QuantileCurve:
    grid: np.ndarray  # percent
    values: np.ndarray  # 1/s

    def to_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.grid.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class CriticalLambda:
    percent: float
    value: float


def test_plan(
    case: PowerSystemCase,
    plan: DampingPlan,
    spec: UncertaintySpec,
    channels: Channels | str,
    draws: int,
    sampler: SeededSampler,
    bank: InstanceBank | None = None,
    jobs: int = 1,
) -> LyapunovDistribution:
    """λ_L for ``draws`` independent draws of the enabled channels.

    Draw ``j`` uses instance ``j`` of the raw-parameter channel and damping
    draw ``j``; disabled channels stay at their means.
    """
    channels = Channels.parse(channels) if isinstance(channels, str) else channels
    if draws < 1:
        raise AnalysisError("draws must be >= 1")
    bank = bank or InstanceBank(case, spec, sampler)
    mean_beta = plan.as_vector()
    sigma = spec.beta_sigma if channels.beta else 0.0
    out, bad = [], 0
    for start in range(0, draws, BATCH):
        idx = range(start, min(start + BATCH, draws))
        if channels.y:
            nets = bank.networks(idx, jobs=jobs)
        else:
            nets = [bank.base()] * len(idx)
        keep = [k for k, n in enumerate(nets) if n is not None]
        bad += len(nets) - len(keep)
        if not keep:
            continue
        betas = np.stack([sample_beta(mean_beta, sigma, sampler, idx[k]) for k in keep])
        if channels.y:
            P = np.stack([interaction_matrix(nets[k]) for k in keep])
        else:
            P = interaction_matrix(nets[0])
        out.append(lyapunov_batch(P, betas))
    if bad == draws:
        raise AnalysisError("all draws were non-convergent")
    samples = np.concatenate(out)
    return LyapunovDistribution(
        samples,
        draws,
        bad,
        {
            "plan": plan.to_dict(),
            "beta_sigma": spec.beta_sigma,
            "channels": channels.value,
            "seed": sampler.root_seed,
        },
    )


def quantile_curve(dist: LyapunovDistribution | np.ndarray, grid=DEFAULT_GRID) -> QuantileCurve:
    """Empirical quantiles by linear interpolation between order statistics."""
    samples = dist.samples if isinstance(dist, LyapunovDistribution) else np.asarray(dist, dtype=float)
    if samples.size == 0:
        raise AnalysisError("empty sample set")
    grid = np.asarray(grid, dtype=float)
    if np.any((grid < 0) | (grid > 100)):
        raise AnalysisError("quantile grid must lie in [0, 100]")
    values = np.quantile(samples, grid / 100.0, method="linear")
    # interpolation rounding can break ties by an ulp
    return QuantileCurve(grid, np.maximum.accumulate(values))


def critical_lambda(dist: LyapunovDistribution | np.ndarray, percents=CRITICAL_PERCENTS) -> list[CriticalLambda]:
    samples = dist.samples if isinstance(dist, LyapunovDistribution) else np.asarray(dist, dtype=float)
    if samples.size < MIN_CRITICAL_SAMPLES:
        raise AnalysisError(f"need at least {MIN_CRITICAL_SAMPLES} samples, got {samples.size}")
    curve = quantile_curve(samples, percents)
    return [CriticalLambda(float(p), float(v)) for p, v in curve.to_rows()]


def histogram(dist: LyapunovDistribution | np.ndarray, bin_width: float) -> list[tuple[float, int]]:
    """Counts on bins ``[m w, (m+1) w)`` aligned to multiples of the width."""
    samples = dist.samples if isinstance(dist, LyapunovDistribution) else np.asarray(dist, dtype=float)
    if not bin_width > 0:
        raise AnalysisError("bin width must be > 0")
    if samples.size == 0:
        return []
    idx = np.floor(samples / bin_width).astype(np.int64)
    bins, counts = np.unique(idx, return_counts=True)
    return [(float((b + 0.5) * bin_width), int(c)) for b, c in zip(bins, counts)]


def bootstrap_interval(samples, statistic=np.median, level: float = 0.99, resamples: int = 2000, rng=None):
    """Percentile bootstrap interval of ``statistic``."""
    samples = np.asarray(samples, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(0)
    stats = np.empty(resamples)
    for b in range(resamples):
        stats[b] = statistic(samples[rng.integers(0, samples.size, samples.size)])
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [tail, 1.0 - tail])
    return float(lo), float(hi)


@dataclass
class ReportCell:
    method: str
    sigma_opt: float | None  # None when the method ignores damping noise
    sigma_test: float
    channels: str
    curve: QuantileCurve
    criticals: list[CriticalLambda]
    requested: int
    nonconvergent: int
    seed: int


def compare_report(cells: list[ReportCell]) -> tuple[dict, str]:
    """JSON document and CSV table for a set of tested plans.

    The CSV holds one row per cell with the quantile curve followed by the
    critical values; all cells must share both grids.
    """
    if not cells:
        raise AnalysisError("no cells to report")
    grid = cells[0].curve.grid
    percents = [c.percent for c in cells[0].criticals]
    for c in cells[1:]:
        if not np.array_equal(c.curve.grid, grid) or [x.percent for x in c.criticals] != percents:
            raise AnalysisError(f"grid mismatch in cell {c.method}/{c.sigma_opt}/{c.sigma_test}")
    doc = {
        "quantile_grid": grid.tolist(),
        "critical_percents": percents,
        "cells": [
            {
                "method": c.method,
                "sigma_opt": c.sigma_opt,
                "sigma_test": c.sigma_test,
                "channels": c.channels,
                "quantiles": c.curve.values.tolist(),
                "critical": [x.value for x in c.criticals],
                "requested": c.requested,
                "nonconvergent": c.nonconvergent,
                "seed": c.seed,
            }
            for c in cells
        ],
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["method", "sigma_opt", "sigma_test", "channels", "requested", "nonconvergent", "seed"]
        + [f"q{_fmt(g)}" for g in grid]
        + [f"lc{_fmt(p)}" for p in percents]
    )
    for c in cells:
        w.writerow(
            [c.method, "" if c.sigma_opt is None else repr(c.sigma_opt), repr(c.sigma_test), c.channels, c.requested, c.nonconvergent, c.seed]
            + [f"{v:.6f}" for v in c.curve.values]
            + [f"{x.value:.6f}" for x in c.criticals]
        )
    return doc, buf.getvalue()


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def report_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)
