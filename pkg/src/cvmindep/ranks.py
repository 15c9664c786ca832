"""Data ingestion, ranks, the empirical copula and its Moebius subset processes.

Ranks follow the usual convention R_ij = #{l : X_lj <= X_ij}; ties, which
the continuous-margin theory excludes, are broken at random with a seeded
generator so that every column is a permutation of 1..n.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or unusable dataset."""


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("dataset must be a 2-d table")
        n, d = values.shape
        if n < 2 or d < 2:
            raise DataError(f"need n >= 2 rows and d >= 2 columns, got n={n}, d={d}")
        if not np.all(np.isfinite(values)):
            raise DataError("dataset contains NaN or infinite entries")
        object.__setattr__(self, "values", values)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{j + 1}" for j in range(d)))
        elif len(self.names) != d:
            raise DataError("number of column names does not match the data")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RankMatrix:
    ranks: np.ndarray
    tie_report: tuple[int, ...] = field(default=())

    def __post_init__(self):
        ranks = np.asarray(self.ranks)
        if ranks.ndim != 2 or ranks.shape[0] < 1:
            raise DataError("rank matrix must be 2-d")
        ranks = ranks.astype(np.int64)
        n = ranks.shape[0]
        expected = np.arange(1, n + 1)
        for j in range(ranks.shape[1]):
            if not np.array_equal(np.sort(ranks[:, j]), expected):
                raise DataError(f"column {j + 1} is not a permutation of 1..{n}")
        object.__setattr__(self, "ranks", ranks)
        if not self.tie_report:
            object.__setattr__(self, "tie_report", (0,) * ranks.shape[1])

    @property
    def n(self) -> int:
        return self.ranks.shape[0]

    @property
    def d(self) -> int:
        return self.ranks.shape[1]

    @property
    def ties_broken(self) -> int:
        return int(sum(self.tie_report))


@dataclass(frozen=True, order=True)
class SubsetMask:
    """A subset A of {1, ..., d} with |A| >= 2, stored as a bitmask.

    Bit j (0-based) set means variable j + 1 belongs to A.  Ordering is by
    (cardinality, bits), which is the report order used everywhere.
    """

    cardinality: int
    bits: int

    @classmethod
    def from_bits(cls, bits: int) -> "SubsetMask":
        if bits < 0:
            raise ValueError("bitmask must be nonnegative")
        size = bin(bits).count("1")
        if size < 2:
            raise ValueError(f"subset must have at least 2 elements, got {size}")
        return cls(size, bits)

    @classmethod
    def from_members(cls, members: Iterable[int]) -> "SubsetMask":
        """Build from 1-based variable labels."""
        bits = 0
        for j in members:
            if j < 1:
                raise ValueError("variable labels are 1-based")
            bits |= 1 << (j - 1)
        return cls.from_bits(bits)

    @property
    def indices(self) -> tuple[int, ...]:
        """0-based column indices."""
        return tuple(j for j in range(self.bits.bit_length()) if self.bits >> j & 1)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(j + 1 for j in self.indices)

    def check(self, d: int) -> None:
        if self.bits >> d:
            raise ValueError(f"subset {self} refers to variables beyond d={d}")

    def __str__(self) -> str:
        return "{" + ",".join(str(j) for j in self.members) + "}"


def all_subsets(d: int, min_size: int = 2, max_size: int | None = None) -> list[SubsetMask]:
    """Subsets of {1..d} with min_size <= |A| <= max_size, ordered by (|A|, bits)."""
    if d < 2:
        raise ValueError("d must be at least 2")
    max_size = d if max_size is None else max_size
    out = []
    for k in range(max(min_size, 2), max_size + 1):
        for combo in combinations(range(d), k):
            out.append(SubsetMask.from_bits(sum(1 << j for j in combo)))
    return sorted(out)


def pairs(d: int) -> list[SubsetMask]:
    return all_subsets(d, 2, 2)


# ---------------------------------------------------------------------------
# ingestion


def _sniff_delimiter(line: str) -> str | None:
    for delim in (",", ";", "\t"):
        if delim in line:
            return delim
    return None  # whitespace


def _split(line: str, delim: str | None) -> list[str]:
    if delim is None:
        return line.split()
    return [cell.strip() for cell in next(csv.reader([line], delimiter=delim))]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def parse_dataset(text: str, delimiter: str | None = "auto", header: bool | None = None) -> Dataset:
    """Parse delimited text into a Dataset.

    ``delimiter="auto"`` picks comma, semicolon or tab from the first data
    line and falls back to whitespace.  ``header=None`` treats the first line
    as a header when any of its cells is non-numeric.  Lines starting with
    ``#`` and blank lines are skipped.
    """
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(io.StringIO(text).read().splitlines())]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise DataError("empty dataset")
    delim = _sniff_delimiter(lines[0][1]) if delimiter == "auto" else delimiter

    names: tuple[str, ...] = ()
    first = _split(lines[0][1], delim)
    if header is None:
        header = not all(_is_number(c) for c in first)
    if header:
        names = tuple(first)
        lines = lines[1:]

    rows = []
    width = len(names) if names else None
    for lineno, ln in lines:
        cells = _split(ln, delim)
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise DataError(f"line {lineno}: expected {width} cells, found {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_number(c))
            raise DataError(f"line {lineno}: non-numeric cell {bad!r}") from None
    if not rows:
        raise DataError("dataset has no data rows")
    return Dataset(np.array(rows, dtype=float), names)


def load_dataset(path: str | Path, delimiter: str | None = "auto", header: bool | None = None) -> Dataset:
    return parse_dataset(Path(path).read_text(), delimiter=delimiter, header=header)


def write_dataset(path: str | Path, data: Dataset | np.ndarray, names: Sequence[str] | None = None) -> None:
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if names is None:
        names = data.names if isinstance(data, Dataset) else [f"x{j + 1}" for j in range(values.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in values:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# ranks


def compute_ranks(data: Dataset | np.ndarray, seed=None) -> RankMatrix:
    """Column-wise ranks with seeded random tie-breaking."""
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    rng = np.random.default_rng(seed)
    n, d = values.shape
    ranks = np.empty((n, d), dtype=np.int64)
    ties = []
    for j in range(d):
        col = values[:, j]
        # random secondary key decides the order within tied groups
        order = np.lexsort((rng.random(n), col))
        ranks[order, j] = np.arange(1, n + 1)
        ties.append(int(n - np.unique(col).size))
    return RankMatrix(ranks, tuple(ties))


# ---------------------------------------------------------------------------
# empirical copula and subset processes


def _as_point(u, d: int):
    if len(u) != d:
        raise ValueError(f"point has {len(u)} coordinates, expected {d}")
    exact = all(isinstance(v, (Fraction, int)) for v in u)
    if exact:
        pt = [Fraction(v) for v in u]
    else:
        pt = [float(v) for v in u]
    if any(v < 0 or v > 1 for v in pt):
        raise ValueError("point lies outside the unit cube")
    return pt, exact


def _indicators(ranks: RankMatrix, pt, exact: bool) -> np.ndarray:
    """n x d boolean array of 1(R_ij <= n u_j)."""
    n = ranks.n
    if exact:
        # R <= n*u  <=>  R <= floor(n*u) for integer R; floor is exact on Fractions
        thresh = np.array([math.floor(n * v) for v in pt], dtype=np.int64)
    else:
        thresh = n * np.asarray(pt)
    return ranks.ranks <= thresh


def copula_count(ranks: RankMatrix, u) -> int:
    """n * C_n(u), the number of rank vectors dominated by n*u."""
    pt, exact = _as_point(u, ranks.d)
    return int(np.sum(np.all(_indicators(ranks, pt, exact), axis=1)))


def empirical_copula(ranks: RankMatrix, u) -> float:
    return copula_count(ranks, u) / ranks.n


def mobius_sum(ranks: RankMatrix, A: SubsetMask, u):
    """sum_i prod_{j in A} {1(R_ij <= n u_j) - u_j}; a Fraction when u is rational."""
    A.check(ranks.d)
    pt, exact = _as_point(u, ranks.d)
    ind = _indicators(ranks, pt, exact)
    idx = A.indices
    if exact:
        # integer arithmetic over the common denominator q of the coordinates in A
        q = math.lcm(*(Fraction(pt[j]).denominator for j in idx))
        num = [int(Fraction(pt[j]) * q) for j in idx]
        total = 0
        for row in ind:
            term = 1
            for j, p in zip(idx, num):
                term *= q * int(row[j]) - p
            total += term
        return Fraction(total, q ** len(idx))
    sub = ind[:, idx].astype(float) - np.asarray(pt)[list(idx)]
    return float(np.sum(np.prod(sub, axis=1)))


def mobius_process(ranks: RankMatrix, A: SubsetMask, u) -> float:
    """G_{A,n}(u) = n^{-1/2} sum_i prod_{j in A} {1(R_ij <= n u_j) - u_j}."""
    return float(mobius_sum(ranks, A, u)) / math.sqrt(ranks.n)


def copula_process(ranks: RankMatrix, u) -> float:
    """sqrt(n) {C_n(u) - prod u_j}."""
    pt, _ = _as_point(u, ranks.d)
    return math.sqrt(ranks.n) * (empirical_copula(ranks, u) - float(np.prod([float(v) for v in pt])))


def centered_subset_process(ranks: RankMatrix, A: SubsetMask, u) -> float:
    """n^{-1/2} sum_i prod_{j in A} {1(R_ij <= n u_j) - U_n(u_j)}.

    U_n is the cdf of the uniform law on {1/n, ..., n/n}.  B_{A,n} is the
    integral of the square of this process over the unit cube.
    """
    A.check(ranks.d)
    pt, exact = _as_point(u, ranks.d)
    n = ranks.n
    ind = _indicators(ranks, pt, exact)
    idx = list(A.indices)
    un = np.array([math.floor(n * v) / n if exact else math.floor(n * v + 0.0) / n for v in pt])
    sub = ind[:, idx].astype(float) - un[idx]
    return float(np.sum(np.prod(sub, axis=1))) / math.sqrt(n)


def grid_point(indices: Sequence[int], n: int) -> list[Fraction]:
    """The grid point (i_1/n, ..., i_d/n) as exact fractions."""
    return [Fraction(i, n) for i in indices]
