import sys

import pytest

from cpsim import ScenarioConfig


@pytest.fixture
def short_cfg():
    """Small, fast scenario for integration-style checks."""
    return ScenarioConfig().replace(duration_s=2.0, density=30, penetration=0.25)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.REPORT, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(line)
