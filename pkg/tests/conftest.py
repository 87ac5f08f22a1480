from pathlib import Path

import numpy as np
import pytest
import yaml

from privsme.config import config_from_dict

ROOT = Path(__file__).resolve().parents[1]
SHIP_YAML = ROOT / "configs" / "ship.yaml"

_ACCEPTANCE_LINES = []


@pytest.fixture
def ship_dict():
    return yaml.safe_load(SHIP_YAML.read_text())


@pytest.fixture
def ship_cfg(ship_dict):
    return config_from_dict(ship_dict)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one line per acceptance criterion; printed in the terminal summary."""
    def report(tag, ok, detail):
        line = f"{tag}: {'PASS' if ok else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
