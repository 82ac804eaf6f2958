import os

import numpy as np
import pytest

from riskscore.dataset import Dataset, make_rng
from riskscore.problem import CoefficientSet, ProblemSpec


def random_dataset(seed, n=None, d=None, lo=-2, hi=2):
    rng = make_rng(seed)
    n = int(rng.integers(20, 120)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    X = rng.integers(lo, hi + 1, size=(n, d)).astype(float)
    w = rng.normal(size=d)
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ w)))).astype(int)
    y[0], y[1] = 0, 1  # both classes present
    return Dataset.from_arrays(X, y)


def random_spec(seed, n=None, d=None, box=2, C0=1e-4, constraints=()):
    data = random_dataset(seed, n, d)
    coefs = CoefficientSet.uniform(data.d, -box, box)
    return ProblemSpec(data, coefs, C0, tuple(constraints))


@pytest.fixture
def tiny_spec():
    return random_spec(3, n=60, d=3)


@pytest.fixture(scope="session")
def breastcancer():
    from riskscore.dataset import load_bundled

    return load_bundled("breastcancer")


def pytest_report_header(config):
    return f"riskscore backend: {os.environ.get('RISKSCORE_BACKEND', 'numba (default)')}"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: takes minutes")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
