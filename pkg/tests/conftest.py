import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kcs.typists import make_user_traces  # noqa: E402


@pytest.fixture(scope="session")
def users():
    return make_user_traces()


@pytest.fixture(scope="session")
def reference(users):
    return users[0]


_CRITERIA: dict[int, tuple[bool, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[n] = (rep.passed and rep.when == "call", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[n]
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
