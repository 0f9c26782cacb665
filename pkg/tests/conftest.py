import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, p, cond=5.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = np.linspace(1.0, cond, p)
    S = (Q * w) @ Q.T
    return 0.5 * (S + S.T)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "SUMMARY", None) if mod else None
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
