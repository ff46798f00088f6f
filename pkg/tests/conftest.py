import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thermoimpact import ImpactModel, LinearImpact, PermanentImpact, PowerLawImpact

settings.register_profile(
    "repro",
    derandomize=True,
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repro")


@pytest.fixture
def linear_model():
    return ImpactModel(LinearImpact(1.0))


def model(eta=1.0, lam=0.0, gamma=None):
    temp = LinearImpact(eta) if gamma is None else PowerLawImpact(eta, gamma)
    return ImpactModel(temp, PermanentImpact(lam))


def midpoint(f, a, b, n):
    """Composite midpoint rule, the brute-force oracle used across the tests."""
    h = (b - a) / n
    x = a + h * (np.arange(n) + 0.5)
    return float(np.sum(f(x)) * h)


ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
