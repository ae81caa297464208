import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
        print(line)
        results[number] = line
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
