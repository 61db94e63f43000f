"""Shared fixtures: config paths and cached canonical scenario runs."""

import pathlib

import pytest

from wormsim import composition
from wormsim.config import load_config

CONFIG_DIR = pathlib.Path(__file__).resolve().parent.parent / "configs"


def config_path(name: str) -> str:
    return str(CONFIG_DIR / f"{name}.toml")


@pytest.fixture(scope="session")
def configs():
    return {p.stem: str(p) for p in CONFIG_DIR.glob("*.toml")}


class ScenarioRun:
    def __init__(self, name):
        self.config = load_config(config_path(name))
        self.assembly = self.config.assembly()
        self.trace = composition.simulate(self.assembly)


_cache = {}


def canonical_run(name: str) -> ScenarioRun:
    if name not in _cache:
        _cache[name] = ScenarioRun(name)
    return _cache[name]


@pytest.fixture(scope="session")
def run_fig5a():
    return canonical_run("fig5a")


@pytest.fixture(scope="session")
def run_fig5b():
    return canonical_run("fig5b")


@pytest.fixture(scope="session")
def run_fig5c():
    return canonical_run("fig5c")


@pytest.fixture(scope="session")
def run_fig6a():
    return canonical_run("fig6a")


@pytest.fixture(scope="session")
def run_fig6b():
    return canonical_run("fig6b")


@pytest.fixture(scope="session")
def run_ib_beta():
    return canonical_run("ib_beta")
