import warnings

import pytest

from choquard.errors import DegenerateCrossingAtK

_ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def _quiet_degeneracy():
    # Degenerate shells are expected in the oscillator fixtures.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateCrossingAtK)
        yield


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = (report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        outcome, dt = _ACCEPTANCE[name]
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{tag}  {name}  ({dt:.1f} s)")
