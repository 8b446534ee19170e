from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from racescan.trace import Trace
from racescan.trace_io import GenConfig, gen_random_trace, load_fixture, parse_trace

settings.register_profile(
    "racescan", max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("racescan")

ACCEPTANCE_KEY = pytest.StashKey[list]()


def tr(text: str) -> Trace:
    """Trace from compact lines ``thread op target``, one per line."""
    rows = []
    for line in text.strip().splitlines():
        line = line.split("#")[0].strip()
        if line:
            t, op, x = line.split()
            rows.append((t, op, x))
    return Trace.from_tuples(rows)


def small_config(seed: int, events: int = 12) -> GenConfig:
    """Varied generator settings so sweeps cover many shapes."""
    return GenConfig(
        events=events,
        threads=2 + seed % 3,
        locks=1 + seed % 3,
        variables=1 + seed % 2,
        seed=seed,
        fork_join_density=(0.2, 0.5, 0.8)[seed % 3],
        cross_thread=(0.3, 0.7, 1.0)[(seed // 3) % 3],
        nesting=1 + seed % 2,
    )


def small_trace(seed: int, events: int = 12) -> Trace:
    return gen_random_trace(small_config(seed, events))


@pytest.fixture
def fixture_trace():
    return load_fixture


@pytest.fixture
def parse():
    return parse_trace


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
