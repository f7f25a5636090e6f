"""Shared fixtures. The clock is pinned so stored timestamps are reproducible."""

from __future__ import annotations

import os
import sys
from pathlib import Path

# 2025-06-01T00:00:00Z: after every fixture's ingest date and inside a one-year horizon
os.environ.setdefault("SOURCE_DATE_EPOCH", "1748736000")

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).resolve().parent))

settings.register_profile(
    "repo", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("repo")

from gridqa.grid import load_grid  # noqa: E402
from gridqa.store import DualStore, ingest_document  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def case_a():
    return load_grid(FIXTURES / "case_a.json")


@pytest.fixture
def case_b():
    return load_grid(FIXTURES / "case_b_mini.json")


@pytest.fixture
def make_store(tmp_path):
    """Returns ``build(*fixture_names, window=40)`` producing a fresh store."""
    counter = {"n": 0}

    def build(*names: str, window: int = 40) -> DualStore:
        counter["n"] += 1
        store = DualStore.open(tmp_path / f"store{counter['n']}", create=True)
        for name in names:
            ingest_document(store, load_grid(FIXTURES / f"{name}.json"), window)
        return store

    return build


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
