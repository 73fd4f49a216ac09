import copy

import pytest

from pmipmih.scenario import load_scenario, scenario_from_dict
from pmipmih.sim import Simulation

BASE_RAW = load_scenario("paper_fig8").raw

ACCEPTANCE_LINES: list[str] = []


def make_raw(flows=None, **sections) -> dict:
    """Copy of the shipped scenario with per-section key overrides."""
    raw = copy.deepcopy(BASE_RAW)
    if flows is not None:
        raw["flows"] = flows
        raw["run"].pop("measure_flow", None)
    for section, values in sections.items():
        if section == "cells":
            raw["topology"]["cells"] = values
            continue
        raw.setdefault(section, {}).update(values)
    return raw


def make_scenario(flows=None, **sections):
    return scenario_from_dict(make_raw(flows, **sections))


def three_cells() -> list[dict]:
    return [dict(ap=f"ap{i + 1}", mag=f"mag{i + 1}", center=200.0 * i, radius=120.0,
                 lgd_threshold=100.0, ld_threshold=115.0, channel=1 + 5 * i) for i in range(3)]


def run(sc, variant=None, observe=None):
    sim = Simulation(sc, variant)
    if observe is not None:
        sim.engine.observers.append(observe)
    return sim.run()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def scenario_factory():
    return make_scenario
