import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a pass/fail line, then asserts."""
    def record(n: int, ok: bool, detail: str):
        prev = _RESULTS.get(n, (True, ""))
        ok_all = prev[0] and bool(ok)
        text = "; ".join(s for s in (prev[1], detail) if s)
        _RESULTS[n] = (ok_all, text)
        assert ok, f"criterion {n}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
