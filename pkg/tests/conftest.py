import sys

import pytest

import trainfix


@pytest.fixture(scope="session")
def _trained_bundle():
    return trainfix.trained_weights()


@pytest.fixture(scope="session")
def trained(_trained_bundle):
    """Float64 weights fitted on the default corpus (cached on disk)."""
    return _trained_bundle[0]


@pytest.fixture(scope="session")
def training_log(_trained_bundle):
    """Per-step loss curve of the cached training run."""
    return _trained_bundle[1]


@pytest.fixture(scope="session")
def default_corpus():
    return trainfix.default_corpus()


def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line verdicts of the end-to-end checks after the run
    (their inline prints are swallowed by output capture otherwise)."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "SUMMARY", None)
    if lines:
        terminalreporter.section("headline guarantees")
        for line in lines:
            terminalreporter.write_line(line)
