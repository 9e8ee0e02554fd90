import numpy as np
import pytest

import condspec as cs
from condspec.simstudy import Ma2Config, generate_ma2

_ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def ma2_data_small():
    """One MA(2) dataset at the desk-scale study cell."""
    return generate_ma2(Ma2Config(n_subjects=25, n_time=300, seed=11))


@pytest.fixture(scope="session")
def ma2_fit_small(ma2_data_small):
    """A short chain on the MA(2) dataset, shared by functional tests."""
    config = cs.ModelConfig(iterations=600, burn_in=200, n_j=10, n_h=5, seed=5)
    return cs.run_chain(ma2_data_small, config)


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    marker = getattr(report, "_acceptance_criterion", None)
    if "test_acceptance.py::" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(
            f"{name}: {'PASS' if outcome == 'passed' else outcome.upper()}")
