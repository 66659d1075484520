import re

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_DETAILS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}
_CRITERION = re.compile(r"test_criterion_(\d+)_")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report(request):
    """Record the measured values behind an acceptance criterion."""
    n = int(_CRITERION.search(request.node.name).group(1))

    def note(text: str) -> None:
        _DETAILS[n] = text

    return note


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        if _OUTCOMES.get(n) != "FAIL":
            _OUTCOMES[n] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        terminalreporter.write_line(f"criterion {n}: {_OUTCOMES[n]}  {_DETAILS.get(n, '')}")
