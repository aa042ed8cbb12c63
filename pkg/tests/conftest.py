import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from freewalk.config import fixture  # noqa: E402
from freewalk.core import free_product_from_spec  # noqa: E402

ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def fix_a():
    return free_product_from_spec(fixture("exampleA"))


@pytest.fixture(scope="session")
def fix_null():
    return free_product_from_spec(fixture("null"))


@pytest.fixture(scope="session")
def fix_ray():
    return free_product_from_spec(fixture("ray"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
