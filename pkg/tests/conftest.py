import functools
from pathlib import Path

import pytest

from dualmerit.io import load_model
from dualmerit.lp import solve_model
from dualmerit.model import Carrier, EnergyModel, GeneratorSpec, LoadSpec, SnapshotSet

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "dualmerit" / "scenarios"
MODEL_SCENARIOS = ("two_generator", "battery_arbitrage", "mini_sector", "curtailment")


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.toml"


@functools.lru_cache(maxsize=None)
def scenario_model(name: str) -> EnergyModel:
    return load_model(scenario_path(name))


@functools.lru_cache(maxsize=None)
def solved(name: str):
    return solve_model(scenario_model(name))


def two_generator(weight: float = 1.0, load: float = 70.0) -> EnergyModel:
    return EnergyModel(
        carriers=(Carrier("elec", "MWh", True),),
        snapshots=SnapshotSet.hourly(1, weight=weight),
        generators=(GeneratorSpec("A", "elec", 10.0, capacity_existing=50.0),
                    GeneratorSpec("B", "elec", 30.0, capacity_existing=50.0)),
        loads=(LoadSpec("demand", "elec", load),),
    )


@pytest.fixture
def two_gen():
    return two_generator()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
