import functools
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from fleetflux import FluidPoint, NetworkConfig, SystemState, load_instance, solve_fluid  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def fluid(instance, kind="FP1", fleet_size=200, zeta=0.0, engine=None):
    """Solved city instance, shared across tests (solutions are not mutated)."""
    cfg = load_instance(instance, fleet_size=fleet_size, zeta=zeta)
    return solve_fluid(cfg, kind, engine=engine)


def tiny_config(**kw) -> NetworkConfig:
    """Two zones, all four trip pairs, one en-route class."""
    args = dict(
        lam=[[0.3, 0.5], [0.4, 0.2]], inv_mu=[[0.5, 1.0], [1.0, 0.5]], fleet_size=4,
        inv_nu=[0.25], delta=[1.0], alpha=2.0, beta=1.0, omega=4.0,
    )
    args.update(kw)
    return NetworkConfig.from_matrices(args.pop("lam"), args.pop("inv_mu"), **args)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


N = 4  # fleet size of the small AP fixtures


def loops_config(**kw):
    # two zones with self-loop trips only keeps vertex enumeration cheap
    return tiny_config(lam=[[0.3, 0.0], [0.0, 0.2]], inv_mu=[[0.5, 1.0], [1.0, 0.5]], fleet_size=N, **kw)


def target_point(cfg, a=(1, 1), f=(1, 1), d=None, e=None, p=0.5, q=0.8):
    P, R, K = len(cfg.trip_pairs), len(cfg.reposition_pairs), cfg.max_classes
    return FluidPoint(
        a=np.array(a, float) / N, d=(np.zeros((P, K)) if d is None else np.array(d, float)) / N,
        e=(np.zeros(R) if e is None else np.array(e, float)) / N, f=np.array(f, float) / N,
        x=np.ones((P, K)), p=np.full((P, K), p), q=np.full((cfg.n_zones, K), q))


def state(cfg, a, f, d=None, e=None):
    s = SystemState.empty(cfg)
    s.a[:] = a
    s.f[:] = f
    if d is not None:
        s.d[:] = d
    if e is not None:
        s.e[:] = e
    s.check(cfg.fleet_size)
    return s


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
