from pathlib import Path

import numpy as np
import pytest

from proxybounds import load_problem

DATA = Path(__file__).resolve().parent.parent / "data"
EPSILONS = (0.1, 0.2, 0.3, 0.4)

# Reported optima of the binary instance after 1000 iterations, per epsilon:
# bound value and (theta, psi, omega), rounded to three decimals.
REPORTED = {
    0.1: (0.370, ([0.067, 0.133], [0.261, 0.239], [0.333, 0.167])),
    0.2: (0.350, ([0.050, 0.150], [0.262, 0.238], [0.375, 0.125])),
    0.3: (0.298, ([0.029, 0.171], [0.264, 0.236], [0.429, 0.072])),
    0.4: (0.200, ([0.001, 0.199], [0.310, 0.190], [0.500, 0.000])),
}

# An exact optimizer of the epsilon = 0.4 instance quoted alongside its witness.
PHI_OPT_04 = ([0.0, 0.2], [0.3, 0.2], [0.5, 0.0])


def data_path(name: str) -> Path:
    return DATA / name


def load(name: str):
    return load_problem(data_path(name).read_bytes())


def eps_name(eps: float) -> str:
    return f"eps0{int(round(eps * 10))}.json"


def eps_spec(eps: float):
    return load(eps_name(eps))


@pytest.fixture
def spec04():
    return eps_spec(0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# One summary line per acceptance criterion, printed after the test session.
# Keyed by criterion number so the order does not depend on test order.
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
