import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from attackmdp.grid import pjm5, pjm5_text  # noqa: E402
from attackmdp.pipeline import ScenarioConfig, build_model  # noqa: E402

ACCEPTANCE_LINES: list[str] = []

TWO_BUS = """
base_mva: 100
buses:
  - {id: 0, name: G, is_slack: true, base_load_mw: 0}
  - {id: 1, name: L, is_slack: false, base_load_mw: 100}
lines:
  - {id: 0, from: 0, to: 1, r_pu: 0.0, x_pu: 0.1, limit_mw: 300, reward_weight: 1}
generators:
  - {id: 0, bus: 0, bid: 10, p_min: 0, p_max: 500}
devices:
  - id: 0
    name: M
    measured:
      - {kind: line_flow, line: 0, end: to}
"""


@pytest.fixture(scope="session")
def grid():
    return pjm5()


@pytest.fixture(scope="session")
def grid_text():
    return pjm5_text()


@pytest.fixture(scope="session")
def model():
    return build_model(ScenarioConfig())


@pytest.fixture
def two_bus_text():
    return TWO_BUS


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
