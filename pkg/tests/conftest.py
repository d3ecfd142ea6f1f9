import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_VERDICTS: dict[tuple[int, str], tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line; returns the pass flag for asserting."""

    def record(number: int, passed: bool, detail: str, part: str = "") -> bool:
        _VERDICTS[number, part] = (bool(passed), detail)
        print(_line(number, part, passed, detail), flush=True)
        return bool(passed)

    return record


def _line(number: int, part: str, passed: bool, detail: str) -> str:
    name = f"criterion {number}{' (' + part + ')' if part else ''}"
    return f"{name}: {'PASS' if passed else 'FAIL'} | {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        ok, detail = _VERDICTS[k]
        terminalreporter.write_line(_line(*k, ok, detail))
