import os

import numpy as np
import pytest

from rpd_lab.markov_core import validate_kernel

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}

CYCLIC3_ROWS = [[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]


@pytest.fixture
def cyclic3():
    return validate_kernel(CYCLIC3_ROWS)


@pytest.fixture
def cyclic3_csv(tmp_path):
    path = tmp_path / "cyclic3.csv"
    path.write_text("\n".join(",".join(str(v) for v in row) for row in CYCLIC3_ROWS) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(int(os.environ.get("RPD_TEST_SEED", "12345")))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} [{detail}]")
