from __future__ import annotations

import numpy as np
import pytest

from gridstab.analysis import (
    AnalysisError,
    Channels,
    CriticalLambda,
    LyapunovDistribution,
    QuantileCurve,
    ReportCell,
    bootstrap_interval,
    compare_report,
    critical_lambda,
    histogram,
    quantile_curve,
    test_plan as run_test_plan,
)
from gridstab.optimize import DampingPlan, PlanKind
from gridstab.stability import lyapunov_of
from gridstab.uncertainty import InstanceBank, SeededSampler, UncertaintySpec


def test_quantile_median_of_three():
    curve = quantile_curve(np.array([-3.0, -2.0, -1.0]), grid=[50])
    assert curve.values[0] == -2.0


def test_quantile_constant_is_flat():
    curve = quantile_curve(np.full(500, -3.5))
    assert np.all(curve.values == -3.5)


def test_quantile_rejects_empty_and_bad_grid():
    with pytest.raises(AnalysisError):
        quantile_curve(np.array([]))
    with pytest.raises(AnalysisError):
        quantile_curve(np.array([1.0]), grid=[101])


def test_critical_uniform():
    x = np.random.default_rng(0).uniform(-4, -2, 100000)
    crit = critical_lambda(x)
    assert [c.percent for c in crit] == [95, 96, 97, 98, 99]
    assert crit[0].value == pytest.approx(-2.1, abs=0.01)
    assert crit[-1].value == pytest.approx(-2.02, abs=0.01)


def test_critical_needs_enough_samples():
    with pytest.raises(AnalysisError):
        critical_lambda(np.zeros(99))


def test_histogram_partitions_samples():
    x = np.random.default_rng(1).normal(-3, 0.4, 5000)
    bins = histogram(x, 0.05)
    assert sum(n for _, n in bins) == x.size
    centers = np.array([c for c, _ in bins])
    assert np.all(np.diff(centers) > 0)
    offsets = centers / 0.05 - 0.5
    assert np.allclose(offsets, np.round(offsets), atol=1e-9)
    with pytest.raises(AnalysisError):
        histogram(x, 0.0)


def test_distribution_bookkeeping():
    with pytest.raises(AnalysisError):
        LyapunovDistribution(np.zeros(3), requested=5, nonconvergent=1)
    d = LyapunovDistribution(np.zeros(3), requested=4, nonconvergent=1)
    assert d.nonconvergent_fraction == 0.25


def test_channels_parse():
    assert Channels.parse("beta") is Channels.BETA_ONLY
    assert Channels.parse("y") is Channels.Y_ONLY
    assert Channels.parse("full").beta and Channels.parse("full").y


def test_beta_only_zero_sigma_is_deterministic(case39, net39, spec39):
    plan = DampingPlan(PlanKind.UNIFORM, [7.75], 10)
    dist = run_test_plan(case39, plan, spec39.with_beta_sigma(0.0), Channels.BETA_ONLY, 50, SeededSampler(0))
    assert np.all(dist.samples == lyapunov_of(net39, np.full(10, 7.75)))


def test_y_only_ignores_beta_sigma(case39, spec39):
    plan = DampingPlan(PlanKind.UNIFORM, [7.75], 10)
    a = run_test_plan(case39, plan, spec39.with_beta_sigma(0.0), "y", 30, SeededSampler(3))
    b = run_test_plan(case39, plan, spec39.with_beta_sigma(1.0), "y", 30, SeededSampler(3))
    assert np.array_equal(a.samples, b.samples)


def test_full_channels_reuse_shared_bank(case39, spec39):
    plan = DampingPlan(PlanKind.UNIFORM, [7.75], 10)
    sampler = SeededSampler(5)
    bank = InstanceBank(case39, spec39, sampler)
    a = run_test_plan(case39, plan, spec39.with_beta_sigma(1.0), Channels.FULL, 40, sampler, bank=bank)
    b = run_test_plan(case39, plan, spec39.with_beta_sigma(1.0), Channels.FULL, 40, SeededSampler(5))
    assert np.array_equal(a.samples, b.samples)
    assert a.requested == 40


def test_bootstrap_interval_brackets_median():
    x = np.random.default_rng(2).normal(0, 1, 2000)
    lo, hi = bootstrap_interval(x, resamples=500)
    assert lo < np.median(x) < hi
    assert hi - lo < 0.2


def _cell(method, values, grid=(10, 50, 90)):
    return ReportCell(
        method=method,
        sigma_opt=None,
        sigma_test=1.0,
        channels="full",
        curve=QuantileCurve(np.asarray(grid, float), np.asarray(values, float)),
        criticals=[CriticalLambda(95.0, values[-1])],
        requested=100,
        nonconvergent=0,
        seed=1,
    )


def test_report_identical_cells():
    doc, text = compare_report([_cell("equal", [-3, -2, -1]), _cell("distinct", [-3, -2, -1])])
    assert doc["cells"][0]["quantiles"] == doc["cells"][1]["quantiles"]
    rows = text.strip().splitlines()
    assert rows[0].startswith("method,") and "q50" in rows[0] and "lc95" in rows[0]
    assert rows[1].split(",")[7:] == rows[2].split(",")[7:]


def test_report_grid_mismatch_raises():
    with pytest.raises(AnalysisError, match="grid"):
        compare_report([_cell("equal", [-3, -2, -1]), _cell("distinct", [-3, -2, -1], grid=(10, 60, 90))])
    with pytest.raises(AnalysisError):
        compare_report([])
