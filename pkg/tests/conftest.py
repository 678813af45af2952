import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from homflow.engine import fractional_backend, tv_backend
from homflow.grid import Domain

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

THIRD = 0.3333333333333333
TWO_THIRDS = 0.6666666666666666


@pytest.fixture(scope="session")
def line300():
    return Domain.interval(1.0, 300)


@pytest.fixture(scope="session")
def tv300(line300):
    return tv_backend(line300)


@pytest.fixture(scope="session")
def indicator300(line300):
    return line300.indicator(THIRD, TWO_THIRDS)


@pytest.fixture(scope="session")
def frac8():
    return fractional_backend(Domain.interval(1.0, 8, "dirichlet_zero"), 0.5, 8)


@pytest.fixture(scope="session")
def frac16():
    return fractional_backend(Domain.interval(1.0, 16, "dirichlet_zero"), 0.5, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            if "criterion" not in props:
                continue
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines.append((props["criterion"], f"criterion {props['criterion']:>2}: {verdict}  {props.get('detail', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
