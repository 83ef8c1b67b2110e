from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dualkg.kg import load_graph_file  # noqa: E402

FIXTURES = Path(str(resources.files("dualkg") / "fixtures"))


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def movie_graph():
    return load_graph_file(FIXTURES / "movie.tsv")


@pytest.fixture(scope="session")
def baggio_graph():
    return load_graph_file(FIXTURES / "baggio.tsv")


@pytest.fixture(scope="session")
def contradiction_graph():
    return load_graph_file(FIXTURES / "contradiction.tsv")


_CRITERIA: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_criterion_"):
        number = int(name.split("_")[2])
        _CRITERIA.setdefault(number, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok = all(outcome == "passed" for outcome in _CRITERIA[number])
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
