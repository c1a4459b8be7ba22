from __future__ import annotations

import sys

import pytest

from dualorch.core import load_suite
from dualorch.gateway import ScriptedBackend
from dualorch.suite import bundled_manifest, bundled_suite_dir, load_hints
from dualorch.tools import Sandbox


@pytest.fixture(scope="session")
def suite():
    return load_suite(bundled_manifest())


@pytest.fixture(scope="session")
def programs(suite):
    return {p.id: p for p in suite}


@pytest.fixture(scope="session")
def scripted(suite):
    return ScriptedBackend.from_dir(bundled_suite_dir() / "scripts")


@pytest.fixture(scope="session")
def hints(suite):
    return load_hints(bundled_suite_dir(), suite)


@pytest.fixture
def sandbox(tmp_path):
    root = tmp_path / "ws"
    root.mkdir()
    return Sandbox(root)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
