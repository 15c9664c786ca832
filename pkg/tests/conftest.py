"""Shared brute-force oracles.

The rank processes are constant on the cells prod_j [i_j/n, (i_j+1)/n), so
their squared integrals are exact finite sums over grid points.  These sums
use rational arithmetic and share no code with the kernel formulas.
"""

from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from cvmindep.ranks import RankMatrix


def random_ranks(rng, n, d):
    return RankMatrix(np.column_stack([rng.permutation(n) + 1 for _ in range(d)]))


def _cell_value(R, idx, point):
    """sum_i prod_{j in idx} {1(R_ij <= i_j) - i_j/n} for the grid point ``point``."""
    n = R.shape[0]
    total = Fraction(0)
    for row in R:
        term = Fraction(1)
        for j in idx:
            term *= int(row[j] <= point[j]) - Fraction(point[j], n)
        total += term
    return total


def cell_sum_subset(ranks, A):
    """Exact integral over the cube of the U_n-centred subset process squared."""
    R = ranks.ranks
    n = ranks.n
    idx = A.indices
    total = Fraction(0)
    for cell in product(range(n), repeat=len(idx)):
        point = [0] * ranks.d
        for j, c in zip(idx, cell):
            point[j] = c
        total += _cell_value(R, idx, point) ** 2
    # G = n^{-1/2} * sum, each cell has volume n^{-|A|}
    return total / (n * Fraction(n) ** len(idx))


def cell_sum_global(ranks):
    """Exact integral of {sqrt(n)(C_n(u) - prod U_n(u_j))}^2 over the cube."""
    R = ranks.ranks
    n, d = R.shape
    total = Fraction(0)
    for cell in product(range(n), repeat=d):
        count = sum(all(row[j] <= cell[j] for j in range(d)) for row in R)
        prod_u = Fraction(1)
        for c in cell:
            prod_u *= Fraction(c, n)
        total += (Fraction(count, n) - prod_u) ** 2
    return total * n / Fraction(n) ** d


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
