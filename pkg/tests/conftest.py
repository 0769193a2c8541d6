import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pbj.data import Dataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blobs():
    """Two well separated Gaussian blobs, 100 points each."""
    r = np.random.default_rng(7)
    x = np.concatenate([r.normal(-2.0, 0.5, (100, 2)), r.normal(2.0, 0.5, (100, 2))])
    y = np.repeat([0, 1], 100)
    return Dataset(x.astype(np.float32), y, 2)


@pytest.fixture
def balanced_toy():
    """Ten classes, six examples each, 3-feature vectors."""
    r = np.random.default_rng(3)
    y = np.repeat(np.arange(10), 6)
    return Dataset(r.normal(size=(60, 3)).astype(np.float32), y, 10)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
