import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

from ifaa.data import CountMatrix, CovariateTable  # noqa: E402


def make_tables(Y, x, w=None, x_names=None, w_names=None):
    Y = np.asarray(Y, dtype=float)
    n, t = Y.shape
    sids = [f"s{i}" for i in range(n)]
    tids = [f"t{k}" for k in range(t)]
    x = np.asarray(x, dtype=float).reshape(n, -1)
    w = np.zeros((n, 0)) if w is None else np.asarray(w, dtype=float).reshape(n, -1)
    x_names = x_names or [f"x{j}" for j in range(x.shape[1])]
    w_names = w_names or [f"w{j}" for j in range(w.shape[1])]
    return CountMatrix(sids, tids, Y), CovariateTable(sids, x, w, x_names, w_names)


@pytest.fixture
def tables():
    return make_tables


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
