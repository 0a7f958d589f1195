import numpy as np
import pytest
import torch
from hypothesis import settings

from lupi_affect.synthetic import GeneratorConfig, generate_session
from lupi_affect.windowing import build_dataset

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_config():
    return GeneratorConfig(seed=11, n_participants=6, session_duration=6.0)


@pytest.fixture(scope="session")
def tiny_sessions(tiny_config):
    return [generate_session(tiny_config, i)[0] for i in range(tiny_config.n_participants)]


@pytest.fixture(scope="session")
def tiny_dataset(tiny_sessions):
    return build_dataset(tiny_sessions, 1.0, 0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_record():
    return _ACCEPTANCE.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
