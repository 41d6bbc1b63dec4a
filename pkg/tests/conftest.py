"""Shared fixtures: the expensive 100 s benchmark runs are computed once.

Each heavy fixture returns (trace, metrics, elapsed_seconds) so the
acceptance tests can also check their runtime budgets.
"""
import time

import pytest

import ivdrem


def timed_run(scenario, config, backend=None):
    t0 = time.perf_counter()
    trace, metrics = ivdrem.run(scenario, config, backend=backend)
    return trace, metrics, time.perf_counter() - t0


@pytest.fixture(scope="session")
def run_proposed_100():
    """Benchmark scenario, proposed law, 100 s."""
    scen = ivdrem.paper2dof()
    cfg = ivdrem.SimConfig(t_end=100.0, decimation=100, law="proposed")
    return timed_run(scen, cfg)


@pytest.fixture(scope="session")
def run_baseline_100():
    """Benchmark scenario, baseline comparison law, 100 s."""
    scen = ivdrem.paper2dof()
    cfg = ivdrem.SimConfig(t_end=100.0, decimation=100, law="baseline")
    return timed_run(scen, cfg)


@pytest.fixture(scope="session")
def run_oracle_100():
    """Adaptation off, estimate frozen at the true parameters (observer floor)."""
    scen = ivdrem.paper2dof()
    scen.theta_hat0 = scen.params.theta.copy()
    cfg = ivdrem.SimConfig(t_end=100.0, decimation=100, law="none")
    return timed_run(scen, cfg)


@pytest.fixture(scope="session")
def run_nodist_100():
    """Disturbance-free run of the proposed law (exactness checks)."""
    scen = ivdrem.paper2dof()
    scen.disturbance = ivdrem.DisturbanceProfile.off(2)
    cfg = ivdrem.SimConfig(t_end=100.0, decimation=100, law="proposed")
    return timed_run(scen, cfg)
