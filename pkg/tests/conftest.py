import numpy as np
import pytest

from trialadjust import TrialDataset
from trialadjust import dgp
from trialadjust.numerics import make_rng


@pytest.fixture
def four_rows():
    """A = (1,1,0,0), Y = (3,1,2,0), w1 = (0,1,2,3)."""
    return TrialDataset(W=[[0.0], [1.0], [2.0], [3.0]], A=[1, 1, 0, 0], Y=[3.0, 1.0, 2.0, 0.0])


@pytest.fixture
def het_trial():
    return dgp.sample_trial(200, "heterogeneous", make_rng(7, 0, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# Acceptance report: one line per criterion, printed after the test summary.
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def acceptance():
    def record(criterion: int, passed: bool | None, detail: str):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        ACCEPTANCE[criterion] = (status, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{status} criterion {k}: {detail}")
