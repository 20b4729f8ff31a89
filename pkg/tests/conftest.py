"""Shared fixtures: the benchmark scenario and a handful of full simulation
runs that several test modules (and the acceptance suite) inspect.  The runs
are session-scoped because each one costs seconds, not milliseconds."""

import pathlib

import pytest

from gridweave.cli import load_scenario
from gridweave.core import TariffSchedule
from gridweave.plant import SimConfig, run_closed_loop

SCENARIO_DIR = pathlib.Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def benchmark_scenario():
    return load_scenario(SCENARIO_DIR / "benchmark8.scenario")


@pytest.fixture(scope="session")
def run_dn_coord(benchmark_scenario):
    """3-day winter, day-night tariff, coordinated, global limit 15 kW."""
    cfg = SimConfig(TariffSchedule.day_night(), days=3, coordination=True,
                    seed=1, global_limit=15.0)
    return run_closed_loop(benchmark_scenario, cfg)


@pytest.fixture(scope="session")
def run_dn_uncoord(benchmark_scenario):
    """3-day winter, day-night tariff, every building on its own."""
    cfg = SimConfig(TariffSchedule.day_night(), days=3, coordination=False,
                    seed=1)
    return run_closed_loop(benchmark_scenario, cfg)


@pytest.fixture(scope="session")
def run_a24_coord(benchmark_scenario):
    """3-day winter, 24h-ahead tariff, coordinated (scenario's 15 kW cap)."""
    cfg = SimConfig(TariffSchedule.ahead24(), days=3, coordination=True,
                    seed=1)
    return run_closed_loop(benchmark_scenario, cfg)


@pytest.fixture(scope="session")
def run_perfect(benchmark_scenario):
    """3-day winter, coordinated, zero forecast error."""
    cfg = SimConfig(TariffSchedule.day_night(), days=3, coordination=True,
                    seed=1, noise_scale=0.0)
    return run_closed_loop(benchmark_scenario, cfg)


@pytest.fixture(scope="session")
def run_transport_pair(benchmark_scenario):
    """The same 1-day run over the in-process and the loopback-TCP transport."""
    base = dict(tariff=TariffSchedule.day_night(), days=1, coordination=True,
                seed=7, global_limit=15.0)
    local = run_closed_loop(benchmark_scenario, SimConfig(**base))
    tcp = run_closed_loop(benchmark_scenario,
                          SimConfig(**base, transport="tcp"))
    return local, tcp
