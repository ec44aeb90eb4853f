"""Shared fixtures: the expensive closed-loop runs are computed once per
session and reused by the unit and acceptance tests."""

import math

import pytest

from orbinspect.config import ScenarioConfig
from orbinspect.simulate import run_scenario


@pytest.fixture(scope="session")
def default_run():
    """Default scenario, barrier on, 1000 s."""
    return run_scenario(ScenarioConfig(duration=1000.0))


@pytest.fixture(scope="session")
def long_run():
    """Default scenario, barrier on, 3000 s."""
    return run_scenario(ScenarioConfig(duration=3000.0))


@pytest.fixture(scope="session")
def unsafe_run():
    """Default scenario with the barrier correction disabled."""
    return run_scenario(ScenarioConfig(duration=1000.0, barrier=False))


@pytest.fixture(scope="session")
def gamma_sweep():
    """Orthogonality-gain sweep on an oblique-approach base config."""
    from orbinspect.cli import sweep_gamma_c

    base = ScenarioConfig(duration=1000.0, theta_a=3.0 * math.pi / 4.0)
    return sweep_gamma_c(base, [0.0, 5.0, 10.0, 15.0, 20.0])


@pytest.fixture(scope="session")
def coverage_run():
    """Default scenario run until full coverage, capped at two sun sweeps."""
    cap = 2.0 * (2.0 * math.pi / 0.001027)
    cfg = ScenarioConfig(duration=cap, stop_on_full_coverage=True)
    return run_scenario(cfg), cap
