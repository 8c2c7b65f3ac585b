import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pnfc.rainsim import SimConfig  # noqa: E402
from pnfc.scene import synthetic_scene  # noqa: E402


@pytest.fixture(scope="session")
def scene32():
    return synthetic_scene(32, 32)


@pytest.fixture(scope="session")
def scene128():
    return synthetic_scene()


@pytest.fixture
def config():
    return SimConfig()


@pytest.fixture
def dry_config():
    return SimConfig(photon_noise=False).without_rain()


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the assertion itself stays in the test."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
