import numpy as np
import pytest

from sfl_lab.data import PartitionSpec, build_shards, dirichlet_partition, make_classification, make_regression_targets
from sfl_lab.models import SplitRidge
from sfl_lab.numkit import derive_stream


def ridge_problem(seed=0, N=5, beta=0.5, dim=6, k=2, lam=0.1, spc=20, classes=4):
    spec = PartitionSpec(N=N, beta=beta, classes=classes, samples_per_class=spc, dim=dim)
    X, labels = make_classification(spec, derive_stream(seed, "data"))
    y, _ = make_regression_targets(X, labels, derive_stream(seed, "targets"))
    parts = dirichlet_partition(labels, N, beta, derive_stream(seed, "partition"))
    return SplitRidge(dim, k, lam=lam), build_shards(X, y, parts)


@pytest.fixture
def ridge_setup():
    return ridge_problem()


@pytest.fixture
def rng():
    return derive_stream(1234, "tests")


def fd_gradient(fun, w, h=1e-6):
    g = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (fun(w + e) - fun(w - e)) / (2 * h)
    return g


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Keep one pass/fail line per acceptance criterion for the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
