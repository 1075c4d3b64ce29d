from __future__ import annotations

from pathlib import Path

import pytest

from kgplan.kg import load_kg
from kgplan.synth import synthesize_kg

DATA = Path(__file__).parent / "data"

# filled by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def fixture_path() -> Path:
    return DATA / "fixture.tsv"


@pytest.fixture(scope="session")
def fixture_kg(fixture_path):
    return load_kg(fixture_path)


@pytest.fixture(scope="session")
def synth_kg():
    return synthesize_kg(0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
