from __future__ import annotations

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from conftest import random_net
from gridstab.analysis import quantile_curve
from gridstab.optimize import metropolis_accept, objective_from_samples, reflect_into
from gridstab.stability import (
    DEFAULT_ZERO_MODE_TOLERANCE,
    assemble_jacobian,
    interaction_matrix,
    lyapunov_batch,
    lyapunov_exponent,
    qep_spectrum,
)
from gridstab.uncertainty import hypersphere_step

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=200, deadline=None)
@given(seed=seeds, n=st.integers(2, 6))
def test_single_zero_mode(seed, n):
    rng = np.random.default_rng(seed)
    net = random_net(rng, n)
    P = interaction_matrix(net)
    assert np.allclose(P @ np.ones(n), 0.0, atol=1e-12)
    jac = assemble_jacobian(net, net.beta)
    ev = np.linalg.eigvals(jac.matrix)
    near = np.abs(ev) <= DEFAULT_ZERO_MODE_TOLERANCE * np.linalg.norm(jac.matrix)
    assert near.sum() == 1
    res = lyapunov_exponent(jac)
    assert res.lambda_L == lyapunov_batch(P, net.beta[None, :])[0]


@settings(max_examples=200, deadline=None)
@given(seed=seeds, n=st.integers(1, 5))
def test_qep_matches_jacobian(seed, n):
    rng = np.random.default_rng(seed)
    net = random_net(rng, n)
    a = np.linalg.eigvals(assemble_jacobian(net, net.beta).matrix)
    b = qep_spectrum(net, net.beta)
    assert a.size == b.size == 2 * n
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    scale = np.maximum(1.0, np.abs(a[rows]))
    assert np.all(cost[rows, cols] <= 1e-9 * scale)


@settings(max_examples=200, deadline=None)
@given(seed=seeds, n=st.integers(2, 5))
def test_lambda_invariant_under_relabeling(seed, n):
    rng = np.random.default_rng(seed)
    net = random_net(rng, n)
    perm = rng.permutation(n)
    P = interaction_matrix(net)
    lam = lyapunov_batch(P, net.beta[None, :])[0]
    lam_p = lyapunov_batch(P[np.ix_(perm, perm)], net.beta[perm][None, :])[0]
    assert math.isclose(lam, lam_p, rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=60))
def test_quantile_curve_monotone_and_bounded(values):
    x = np.array(values)
    curve = quantile_curve(x)
    assert np.all(np.diff(curve.values) >= 0)
    assert np.all(curve.values >= x.min()) and np.all(curve.values <= x.max())


@settings(max_examples=300, deadline=None)
@given(seed=seeds, n=st.integers(1, 30), radius=st.floats(1e-3, 10.0))
def test_hypersphere_step_norm(seed, n, radius):
    step = hypersphere_step(n, radius, np.random.default_rng(seed))
    assert abs(np.linalg.norm(step) - radius) <= 1e-12 * max(1.0, radius)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=20))
def test_reflection_lands_in_box(values):
    y = reflect_into(np.array(values), 0.1, 30.0)
    assert np.all((y >= 0.1) & (y <= 30.0))


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(-10, 0, allow_nan=False), min_size=1, max_size=50),
    st.floats(1e-3, 100.0),
)
def test_objective_never_below_mean(values, temperature):
    ev = objective_from_samples(values, temperature)
    assert ev.penalty >= 0
    assert ev.objective >= ev.mean - 1e-12


def test_metropolis_frequencies_on_grid():
    rng = np.random.default_rng(12345)
    trials = 20000
    for delta in (0.1, 0.5, 1.0, 2.0, 4.0):
        for temperature in (0.1, 0.5, 1.0, 2.0, 5.0):
            p = math.exp(-delta / temperature)
            hits = sum(metropolis_accept(delta, temperature, rng) for _ in range(trials))
            se = math.sqrt(p * (1 - p) / trials)
            assert abs(hits / trials - p) <= 3 * se + 1e-12, (delta, temperature, hits / trials, p)
