import numpy as np
import pytest

from hawkes_epm.events import EventSequence
from hawkes_epm.model import HawkesParams
from hawkes_epm.simulation import block_scenario, simulate


def random_params(rng, V=5, K=2, delta=0.5, alpha_scale=0.8, D=0):
    phi = rng.gamma(1.0, 1.0, size=(V, K))
    omega = rng.gamma(1.0, 0.2, size=(K, K))
    alpha = rng.uniform(0.1, alpha_scale, size=(K, K))
    beta = rng.normal(0.0, 0.3, size=(K, K, D))
    return HawkesParams(phi=phi, omega=omega, alpha=alpha, delta=delta, beta=beta)


def random_events(rng, n=30, V=4, T=10.0):
    t = np.sort(rng.uniform(0, T, n))
    src = rng.integers(0, V, n)
    dst = (src + rng.integers(1, V, n)) % V
    return EventSequence(t, src, dst, T, V)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def block_data():
    """Small three-community reciprocal dataset shared by several modules."""
    rng = np.random.default_rng(7)
    scen = block_scenario(V=20, alphas=(0.8, 1.2, 1.6), delta=0.45, rng=rng, n_events=1500,
                          community_rates=(0.05, 0.04, 0.03))
    data, truth = simulate(scen.params, scen.T, rng)
    return scen, data, truth


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
