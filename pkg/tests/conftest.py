import logging

import pytest
from hypothesis import settings

settings.register_profile("pnph", max_examples=25, deadline=None)
settings.load_profile("pnph")

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


@pytest.fixture(autouse=True)
def _quiet_geometry_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="pnph.geometry")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
