import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from grasp.synthgen import build_scenario  # noqa: E402
from grasp.trainer import TrainConfig, fit  # noqa: E402


class ModelCache:
    """Trains each (scenario, config) combination at most once per session."""

    def __init__(self):
        self._scenarios = {}
        self._models = {}

    def scenario(self, attack=None, seed=0, days=14, train_days=10):
        key = (attack, seed, days, train_days)
        if key not in self._scenarios:
            self._scenarios[key] = build_scenario(attack, days=days, train_days=train_days, seed=seed)
        return self._scenarios[key]

    def model(self, seed=0, days=14, train_days=10, **overrides):
        """Model trained on the clean training split (attacks only touch the test side)."""
        key = (seed, days, train_days, tuple(sorted(overrides.items())))
        if key not in self._models:
            split = self.scenario(None, seed, days, train_days).split
            self._models[key] = fit(split.train, TrainConfig(seed=seed, **overrides))
        return self._models[key]


@pytest.fixture(scope="session")
def cache():
    return ModelCache()


@pytest.fixture(scope="session")
def small(cache):
    """A quick three-day corpus: two days train, one day test."""
    return cache.scenario(None, seed=0, days=3, train_days=2), cache.model(seed=0, days=3, train_days=2)


ACCEPTANCE = {}


@pytest.fixture
def record(request):
    """Store a pass/fail line for an acceptance criterion; printed at session end."""

    def _record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
