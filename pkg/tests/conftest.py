import numpy as np
import pytest

from netslic.networks import chain_network, desk_network
from netslic.synthgen import LoadScenario, NoiseConfig, generate_dataset

_CRITERIA = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one pass/fail line per acceptance criterion."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_CRITERIA):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk():
    return desk_network()


@pytest.fixture(scope="session")
def chain3():
    return chain_network(3)


@pytest.fixture(scope="session")
def ideal_desk_dataset(desk):
    return generate_dataset(desk, NoiseConfig(tve_max=0.0, perfect_rqm=True,
                                              rng_seed=11))


@pytest.fixture(scope="session")
def ideal_chain_dataset(chain3):
    return generate_dataset(chain3, NoiseConfig(tve_max=0.0, perfect_rqm=True,
                                                rng_seed=5),
                            LoadScenario(n_samples=600))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
