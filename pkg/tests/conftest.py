from __future__ import annotations

import json

import pytest
from hypothesis import HealthCheck, settings

from gridflow.env import GridFixture, reference_toolset
from gridflow.evaluation import load_suite
from gridflow.fixtures import data_path
from gridflow.retrieval import load_archive
from gridflow.supervisor import load_rules

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def registry():
    return reference_toolset()


@pytest.fixture(scope="session")
def rules(registry):
    return load_rules(data_path("rules.json"), registry)


@pytest.fixture(scope="session")
def grid_fixture():
    return GridFixture.load(data_path("grid_fixture.json"))


@pytest.fixture(scope="session")
def suite():
    return load_suite(data_path("suite.json"))


@pytest.fixture(scope="session")
def archive():
    return load_archive(data_path("archive.jsonl"))


@pytest.fixture(scope="session")
def planted_overrides():
    with open(data_path("planted_overrides.json"), encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def schemas(registry):
    return [registry.schemas[n] for n in registry.names()]
