import os
from pathlib import Path

import pytest

import pipeline


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    """Directory for trained models and batteries; reused when ACTIVELOC_ARTIFACTS is set."""
    env = os.environ.get("ACTIVELOC_ARTIFACTS")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("artifacts")


@pytest.fixture(scope="session")
def full(artifacts):
    return pipeline.full_model(artifacts)


@pytest.fixture(scope="session")
def held_out(artifacts):
    return pipeline.held_out_set(artifacts)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one verdict line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        print(_CRITERIA[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
