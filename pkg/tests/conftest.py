import numpy as np
import pytest

from censored_dm.dm_core import DmParams


def sim_psi() -> DmParams:
    """Four-variate three-component mixture used as the simulation truth."""
    return DmParams(
        np.array([0.25, 0.25, 0.5]),
        np.array([[0.1, 0.1, 0.1, 0.7], [0.7, 0.1, 0.1, 0.1], [0.1, 0.4, 0.4, 0.1]]),
        np.array([70.0, 50.0, 80.0]),
    )


@pytest.fixture
def psi4():
    return sim_psi()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, keyed by criterion number, printed after the run
_VERDICTS = {}


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    detail = dict(report.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else "error"
    _VERDICTS[marker] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        status, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
