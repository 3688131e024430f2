import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pibttp import DistanceTable, decompose, load_map, map_path, parse_map  # noqa: E402

SHIPPED = ("env1", "env2", "env3", "env4")


@functools.lru_cache(maxsize=None)
def world(name: str):
    """(env, decomposition, distance table) for a shipped map, built once per session."""
    env = load_map(map_path(name))
    return env, decompose(env), DistanceTable(env)


def grid(*rows: str) -> str:
    """Map text from bare rows."""
    return f"mapd-map v1\nheight {len(rows)}\nwidth {len(rows[0])}\n" + "\n".join(rows) + "\n"


def build(*rows: str):
    env = parse_map(grid(*rows))
    return env, decompose(env), DistanceTable(env)


@pytest.fixture
def shipped():
    return world


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def plain(*rows: str):
    """(env, distance table) for maps that need no decomposition, such as corridors."""
    env = parse_map(grid(*rows))
    return env, DistanceTable(env)
