"""Shared fixtures: scenarios small enough to step in milliseconds."""

from __future__ import annotations

import pytest

from ranorch.config import ScenarioConfig, parse_scenario

TINY_TOML = """\
[sim]
seed = 11
slots_per_tick = 20
n_small = 2

[traffic.video]
ues = 2
[traffic.gaming]
ues = 2
[traffic.voice]
ues = 2
[traffic.urllc]
ues = 2
"""


@pytest.fixture(scope="session")
def tiny_toml() -> str:
    return TINY_TOML


@pytest.fixture()
def tiny_scenario(tiny_toml: str) -> ScenarioConfig:
    return parse_scenario(tiny_toml)
