import contextlib

import pytest

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@contextlib.contextmanager
def _record(number: int, title: str):
    try:
        yield
    except BaseException as exc:
        _CRITERIA[number] = (title, False, f"{type(exc).__name__}: {str(exc)[:160]}")
        print(f"criterion {number:>2} FAIL  {title}")
        raise
    _CRITERIA[number] = (title, True, "")
    print(f"criterion {number:>2} PASS  {title}")


@pytest.fixture
def criterion():
    """Context manager that records one acceptance criterion's pass/fail line."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
