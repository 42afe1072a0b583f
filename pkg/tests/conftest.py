from pathlib import Path

import numpy as np
import pytest

from hcpi.core import Dataset, RngStream

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_dataset(n=200, p=6, coef=2.0, noise=0.5, seed=0):
    """Independent design, y = coef * x0 + noise."""
    gen = RngStream(seed).generator()
    X = gen.standard_normal((n, p))
    y = coef * X[:, 0] + noise * gen.standard_normal(n)
    return Dataset(X, y, meta={"support": [0]})


def random_tree(p, gen):
    """Uniformly random merge order over ``p`` leaves."""
    from hcpi.cluster import DendrogramTree

    active = list(range(p))
    merges = []
    for nid in range(p, 2 * p - 1):
        a, b = gen.choice(len(active), size=2, replace=False)
        merges.append((active[a], active[b]))
        active = [x for i, x in enumerate(active) if i not in (a, b)] + [nid]
    return DendrogramTree(p, merges, np.arange(1.0, p))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``passed`` for asserting."""

    def record(number, passed, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
