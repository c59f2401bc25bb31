import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("lab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@pytest.fixture
def gauss():
    return lambda x: np.exp(-np.sum(x * x, axis=0))


def pytest_configure(config):
    config.criteria = {}


@pytest.fixture
def record_criterion(request):
    """record(n, verdict): the criterion's line reads FAIL if any recorded part failed."""
    def record(n, verdict):
        parts = request.config.criteria.setdefault(n, [])
        parts.append(verdict)
    return record


def pytest_terminal_summary(terminalreporter, config):
    if not config.criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(config.criteria):
        ok = all(v == "PASS" for v in config.criteria[n])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")
