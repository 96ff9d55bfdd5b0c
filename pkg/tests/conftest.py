import numpy as np
import pytest
from hypothesis import settings

from robust_cpd.model import FactorTriple

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def random_factors(rng, dims, R, dist="normal"):
    draw = rng.standard_normal if dist == "normal" else (lambda size: rng.exponential(1.0, size=size))
    return FactorTriple(*(draw(size=(n, R)) for n in dims))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
