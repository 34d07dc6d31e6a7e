"""Shared fixtures: the worked example networks, a brute-force fiber
enumerator used as an independent oracle, and the terminal reporter
that echoes the acceptance verdict lines after the run."""

import itertools
from pathlib import Path

import numpy as np
import pytest

from routeflow import netmodel

DATA = Path(__file__).parent / "data"


# ----------------------------------------------------------------------
# networks


@pytest.fixture(scope="session")
def junction():
    """Four monitored links, six routes.  Its leading basis block is
    unimodular but freezes the sampler on symmetric count vectors."""
    return netmodel.load_network(DATA / "junction.csv")


@pytest.fixture(scope="session")
def smallnet():
    """Three links, four routes.  The leading 3 x 3 block has
    determinant 2; swapping in column 4 restores unimodularity."""
    return netmodel.load_network(DATA / "smallnet.csv")


@pytest.fixture(scope="session")
def crossing():
    """Nine links, twenty routes: the street-crossing survey network."""
    return netmodel.load_network(DATA / "crossing.csv")


@pytest.fixture(scope="session")
def tee():
    """Five monitored links over the six routes of a four-node tee
    (all ordered pairs among nodes 1, 3, 4 through hub 2, with the
    2 -> 4 leg unmonitored).  Rank 5, so the fiber is a segment."""
    return netmodel.load_network(DATA / "tee.csv")


@pytest.fixture(scope="session")
def crossing_y():
    return netmodel.load_counts(DATA / "crossing_y.csv").counts[0]


@pytest.fixture
def y_segment():
    """Counts that pin routes 1 and 4 of the junction to zero and leave
    an 11-point segment x5 + x6 = 10."""
    return np.array([10, 20, 20, 10])


@pytest.fixture
def y_mixed():
    """Counts whose junction fiber has 20 points, all of total flow 20."""
    return np.array([10, 20, 19, 9])


def interval_network(n_links):
    """Incidence matrix of all contiguous link intervals on a line of
    monitored links: n_links * (n_links + 1) / 2 routes, one per pair
    i <= j, covering links i..j.  Interval matrices are totally
    unimodular, so every partition found by the greedy search works."""
    cols = []
    for i in range(n_links):
        for j in range(i, n_links):
            cols.append([1 if i <= l <= j else 0 for l in range(n_links)])
    rows = np.array(cols, dtype=np.int64).T
    text = "\n".join(",".join(str(v) for v in row) for row in rows)
    return netmodel.load_network(text + "\n")


# ----------------------------------------------------------------------
# oracle

def box_enumerate(ent, y):
    """Brute-force fiber enumeration: reject over the box of per-route
    upper bounds min over traversed links of y.  Exponential in the
    route count; only for tiny cases, as a check on the real search."""
    ent = np.asarray(ent)
    y = np.asarray(y)
    ub = [int(y[np.flatnonzero(ent[:, j])].min()) for j in range(ent.shape[1])]
    hits = []
    for x in itertools.product(*(range(u + 1) for u in ub)):
        if (ent @ np.array(x) == y).all():
            hits.append(x)
    return hits


# ----------------------------------------------------------------------
# acceptance verdict plumbing

_verdicts = []


@pytest.fixture
def criterion():
    """Record one verdict line for an acceptance criterion and fail the
    test when the criterion does not hold.  The lines are echoed in the
    terminal summary so the verdict survives output capture."""

    def check(num, ok, detail):
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _verdicts.append(line)
        print(line, flush=True)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(_verdicts):
            terminalreporter.write_line(line)
