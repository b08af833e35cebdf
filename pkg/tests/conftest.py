from __future__ import annotations

from pathlib import Path

import pytest

from estmap import data

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def case_manifest() -> Path:
    return Path(str(data.path("casestudy/rnai.ini")))


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    lines = acceptance_log.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
