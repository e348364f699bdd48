import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Append one ``criterion N: PASS|FAIL detail`` line for the terminal summary."""
    lines = request.config.stash.setdefault(_KEY, [])

    def add(n: int, passed: bool, detail: str) -> bool:
        lines.append((n, passed, detail))
        return passed

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, passed, detail in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
