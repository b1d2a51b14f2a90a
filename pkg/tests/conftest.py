import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def check(name, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
