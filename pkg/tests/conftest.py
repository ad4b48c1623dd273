"""Session-scoped fixtures: the bundled demo scenario and its full plan run."""

from __future__ import annotations

import logging

import pytest

from fleetplan.planner import plan
from fleetplan.scenario_io import load_scenario, seed_scenario_path

logging.getLogger("fleetplan").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def seed_scenario():
    return load_scenario(seed_scenario_path())


@pytest.fixture(scope="session")
def seed_report(seed_scenario):
    return plan(seed_scenario)


@pytest.fixture(scope="session")
def seed_bundle(seed_report, tmp_path_factory):
    from fleetplan.cli import report_to_dict, write_bundle

    out = tmp_path_factory.mktemp("seed_bundle")
    write_bundle(report_to_dict(seed_report), out)
    return out
