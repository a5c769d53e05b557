import numpy as np
import pytest

from scbandit.model import EnvironmentParams, MessageCatalog


def random_instance(rng, n=None, p=None, c=None, u_high=1.0):
    n = int(rng.integers(1, 8)) if n is None else n
    p = float(rng.choice([0.05, 0.1, 0.3])) if p is None else p
    c = float(rng.choice([0.1, 0.5, 2.0])) if c is None else c
    catalog = MessageCatalog(rng.uniform(0, 1, n))
    env = EnvironmentParams(rng.uniform(0, u_high, n) * 0.999, p, c)
    return catalog, env


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
