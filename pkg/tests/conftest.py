import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from affectecho.corpus import build_synthetic_corpus

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 utterances per emotion, 2 speakers, 2 languages: 80 emotional + 80 neutral clips."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return build_synthetic_corpus(root, n_per_emotion=4, speakers=2, languages=2, seed=5)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
