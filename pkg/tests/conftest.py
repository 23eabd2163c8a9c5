import numpy as np
import pytest

from latentdecode.oracle import GeneratorSpec, ToyFeatureExtractor, ToyGenerator


@pytest.fixture(scope="session")
def spec():
    return GeneratorSpec.toy()


@pytest.fixture(scope="session")
def gen(spec):
    return ToyGenerator(spec, seed=0)


@pytest.fixture(scope="session")
def feat(spec):
    return ToyFeatureExtractor(h_dim=spec.h_dim, seed=0, image_size=spec.image_size)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
