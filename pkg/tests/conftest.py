import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# compiled kernels make the first example of each test slow
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(criterion, ok, detail=""):
        verdict = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        line = f"criterion {criterion:>2}: {verdict}  {detail}".rstrip()
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
