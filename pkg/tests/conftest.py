import pytest

_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config.stash[_KEY]

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
