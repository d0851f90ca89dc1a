import functools

import numpy as np
import pytest
from hypothesis import settings

from kinetrack.pipeline import run_scenario
from kinetrack.synth import scenario_library

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def cached_run(name: str, seed: int = 0):
    return run_scenario(scenario_library()[name], seed=seed)


@pytest.fixture(scope="session")
def library():
    return scenario_library()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {title}" + (f" [{detail}]" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
