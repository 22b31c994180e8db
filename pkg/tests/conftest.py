import pytest

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records one acceptance line for the summary."""

    def record(n: int, ok: bool, detail: str) -> bool:
        request.config.stash[VERDICTS].append((n, ok, detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(VERDICTS, []))
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, ok, detail in lines:
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
