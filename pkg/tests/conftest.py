import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reprrec import synth

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def planted():
    """Default planted-cluster fixture (4 clusters, 200 users, 80 movies)."""
    return synth.generate(users=200, movies=80, clusters=4, seed=0)


@pytest.fixture(scope="session")
def small_planted():
    return synth.generate(users=40, movies=20, clusters=2, seed=5, ratings_per_user=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
