import pytest

from hybrid_skm.model import make_network


@pytest.fixture
def immigration():
    return make_network(["X"], [({}, {"X": 1}, 2.0)])


@pytest.fixture
def immigration_death():
    return make_network(["X"], [({}, {"X": 1}, 10.0), ({"X": 1}, {}, 0.1)])


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance check; all are repeated at the end."""
    def emit(number, title, ok, detail=""):
        line = f"acceptance {number} {title}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
