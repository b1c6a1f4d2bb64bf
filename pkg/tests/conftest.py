from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gridstab.case import Branch, Bus, BusKind, Generator, PowerSystemCase, default_uncertainty, load_case
from gridstab.network import SteadyStateNetwork, network_from_case

DATA = Path(__file__).parent / "data"
PKG_DATA = Path(__file__).resolve().parents[1] / "src" / "gridstab" / "data"
CASE39 = PKG_DATA / "case39.m"
DYN39 = PKG_DATA / "case39_dynamics.csv"


@pytest.fixture(scope="session")
def case39():
    return load_case(CASE39, DYN39)


@pytest.fixture(scope="session")
def case39_raw():
    return load_case(CASE39)


@pytest.fixture(scope="session")
def net39(case39):
    return network_from_case(case39)


@pytest.fixture(scope="session")
def spec39(case39):
    return default_uncertainty(case39)


def symmetric_pair(c: float = 1.0, beta: float = 2.0) -> SteadyStateNetwork:
    """Two generators, coupling c both ways, no phase shift, equal angles."""
    return SteadyStateNetwork(
        alpha=np.zeros(2),
        coupling=np.array([[0.0, c], [c, 0.0]]),
        phase_shift=np.zeros((2, 2)),
        delta_star=np.zeros(2),
        beta=np.full(2, beta),
        internal_emf=np.ones(2),
    )


def single_generator(beta: float = 2.0) -> SteadyStateNetwork:
    return SteadyStateNetwork(
        alpha=np.zeros(1),
        coupling=np.zeros((1, 1)),
        phase_shift=np.zeros((1, 1)),
        delta_star=np.zeros(1),
        beta=np.full(1, beta),
        internal_emf=np.ones(1),
    )


def random_net(rng: np.random.Generator, n: int) -> SteadyStateNetwork:
    """Connected net with positive couplings and small angle spreads."""
    c = rng.uniform(0.5, 20.0, (n, n))
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 0.0)
    g = rng.uniform(-0.2, 0.2, (n, n))
    np.fill_diagonal(g, 0.0)
    return SteadyStateNetwork(
        alpha=rng.normal(size=n),
        coupling=c,
        phase_shift=g,
        delta_star=rng.uniform(-0.3, 0.3, n),
        beta=rng.uniform(0.5, 10.0, n),
        internal_emf=np.ones(n),
    )


def two_bus_case(load_mw: float = 50.0, x: float = 0.1, r: float = 0.0) -> PowerSystemCase:
    return PowerSystemCase(
        buses=(
            Bus(1, BusKind.SLACK, voltage_magnitude_setpoint=1.0),
            Bus(2, BusKind.PV, active_demand=load_mw, voltage_magnitude_setpoint=1.0),
        ),
        branches=(Branch(1, 2, r, x),),
        generators=(
            Generator(1, 0.0, 0.0, 5.0, 20.0, 0.2),
            Generator(2, 0.0, 0.0, 5.0, 20.0, 0.2),
        ),
    )
