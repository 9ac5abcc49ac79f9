import numpy as np
import pytest

from bergeo_aoi.model import SystemConfig, validate_config


def random_battery(seed: int, count: int, lo: float = 0.05, hi: float = 0.95) -> list[SystemConfig]:
    """``count`` configs with N uniform on 1..4 and q, gamma uniform on [lo, hi]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(1, 5))
        out.append(validate_config(rng.uniform(lo, hi, (n, 2)).tolist()))
    return out


@pytest.fixture(scope="session")
def battery():
    return random_battery(0, 50)


# one line per acceptance criterion, printed after the run regardless of capture
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
