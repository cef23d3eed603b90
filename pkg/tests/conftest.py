import numpy as np
import pytest

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs for more than a few seconds")
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line for an acceptance criterion.

    A test that raises before recording its verdict is reported as a failure.
    """
    lines = request.config.stash[_CRITERIA]
    seen = []

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines[number] = line
        seen.append(number)
        print(line)
        return passed

    yield record
    if not seen:
        number = getattr(request.function, "criterion_number", 0)
        lines[number] = f"criterion {number:2d} FAIL  {request.node.name}: raised before completing"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_CRITERIA]
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
