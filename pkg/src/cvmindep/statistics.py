"""Rank statistics B_n, B_{A,n} and the rules combining them into global tests."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from . import __version__
from .ranks import Dataset, RankMatrix, SubsetMask, all_subsets, compute_ranks, pairs
from .spectral import (
    PUBLISHED_CRITICAL_VALUES,
    GLOBAL_TRUNCATION,
    NullSurvivalTable,
    alpha_double_prime,
    alpha_prime,
    combined_law,
    critical_value,
    default_truncation,
    null_law,
)


class CdfSaturationWarning(UserWarning):
    """A null cdf evaluated to 1 and was clamped before taking logs."""


SF_FLOOR = 1e-15

ALL_STATISTICS = ("B", "L", "W", "M", "T", "L2", "M2", "T2")


# ---------------------------------------------------------------------------
# kernels and single statistics


def dn_kernel(s, t, n: int):
    """D_n(s, t) = (n+1)(2n+1)/(6n^2) + s(s-1)/(2n^2) + t(t-1)/(2n^2) - max(s, t)/n."""
    s = np.asarray(s)
    t = np.asarray(t)
    if n < 1:
        raise ValueError("n must be positive")
    if np.any(s < 1) or np.any(s > n) or np.any(t < 1) or np.any(t > n):
        raise ValueError(f"ranks must lie in 1..{n}")
    s = s.astype(float)
    t = t.astype(float)
    n2 = float(n) * n
    # the s and t terms are added first so the result is exactly symmetric
    out = (n + 1) * (2 * n + 1) / (6 * n2) + (s * (s - 1) / (2 * n2) + t * (t - 1) / (2 * n2)) - np.maximum(s, t) / n
    return float(out) if out.ndim == 0 else out


def _kernel_matrices(ranks: np.ndarray) -> list[np.ndarray]:
    n = ranks.shape[0]
    n2 = float(n) * n
    c = (n + 1) * (2 * n + 1) / (6 * n2)
    out = []
    for j in range(ranks.shape[1]):
        r = ranks[:, j].astype(float)
        a = r * (r - 1) / (2 * n2)
        out.append(c + a[:, None] + a[None, :] - np.maximum(r[:, None], r[None, :]) / n)
    return out


def _ranks_array(ranks) -> np.ndarray:
    return ranks.ranks if isinstance(ranks, RankMatrix) else np.asarray(ranks)


def cvm_subset(ranks: RankMatrix, A: SubsetMask) -> float:
    """B_{A,n} = (1/n) sum_i sum_j prod_{k in A} D_n(R_ik, R_jk)."""
    if not isinstance(A, SubsetMask):
        A = SubsetMask.from_members(A)
    A.check(ranks.d)
    R = _ranks_array(ranks)
    mats = _kernel_matrices(R[:, list(A.indices)])
    prod = mats[0]
    for M in mats[1:]:
        prod = prod * M
    return float(prod.sum() / R.shape[0])


def subset_values(ranks, subsets: Sequence[SubsetMask]) -> np.ndarray:
    """B_{A,n} for many subsets, sharing partial kernel products across subsets."""
    R = _ranks_array(ranks)
    n, d = R.shape
    mats = _kernel_matrices(R)
    wanted = {A.bits: i for i, A in enumerate(subsets)}
    out = np.empty(len(subsets))
    top = max((A.bits for A in subsets), default=0).bit_length()

    # depth-first over subsets in increasing-index order; each node multiplies one more matrix in
    def visit(start: int, bits: int, prod: np.ndarray) -> None:
        for j in range(start, top):
            nb = bits | (1 << j)
            p = mats[j] if prod is None else prod * mats[j]
            if nb in wanted:
                out[wanted[nb]] = p.sum() / n
            if any((b & nb) == nb and b != nb for b in wanted):
                visit(j + 1, nb, p)

    visit(0, 0, None)
    return np.maximum(out, 0.0)


def cvm_global(ranks) -> float:
    """B_n from the three-term rank formula, clamped at 0."""
    R = _ranks_array(ranks).astype(float)
    n, d = R.shape
    prod = np.ones((n, n))
    for j in range(d):
        prod *= 1.0 - np.maximum(R[:, j, None], R[None, :, j]) / n
    first = prod.sum() / n
    second = 2.0 * np.sum(np.prod((n * (n - 1) - R * (R - 1)) / (2.0 * n * n), axis=1))
    third = n * ((n - 1) * (2 * n - 1) / (6.0 * n * n)) ** d
    value = first - second + third
    assert value > -1e-10 * n, f"B_n rounding error too large: {value}"
    return max(float(value), 0.0)


# ---------------------------------------------------------------------------
# subset collections and combination rules


@dataclass(frozen=True)
class SubsetStatistics:
    per_subset: Mapping[SubsetMask, float]
    n: int
    d: int
    pairwise: bool = False

    def __post_init__(self):
        expected = pairs(self.d) if self.pairwise else all_subsets(self.d)
        if sorted(self.per_subset) != expected:
            missing = set(expected) - set(self.per_subset)
            extra = set(self.per_subset) - set(expected)
            raise ValueError(f"subset map mismatch: missing {sorted(map(str, missing))}, "
                             f"unexpected {sorted(map(str, extra))}")
        if any(v < 0 for v in self.per_subset.values()):
            raise ValueError("statistics must be nonnegative")
        object.__setattr__(self, "per_subset", {A: float(self.per_subset[A]) for A in expected})

    @classmethod
    def from_ranks(cls, ranks: RankMatrix, pairwise: bool = False) -> "SubsetStatistics":
        subsets = pairs(ranks.d) if pairwise else all_subsets(ranks.d)
        vals = subset_values(ranks, subsets)
        return cls(dict(zip(subsets, vals)), ranks.n, ranks.d, pairwise)

    def items(self):
        return self.per_subset.items()

    def restricted_to_pairs(self) -> "SubsetStatistics":
        if self.pairwise:
            return self
        return SubsetStatistics({A: v for A, v in self.items() if A.cardinality == 2}, self.n, self.d, True)


def _require_full(stats: SubsetStatistics) -> None:
    if stats.pairwise and stats.d > 2:
        raise ValueError("missing subsets: this rule needs every A with |A| >= 2")


def combine_linear(stats: SubsetStatistics) -> float:
    """L_n = sum of B_{A,n} over |A| >= 2."""
    _require_full(stats)
    return float(sum(stats.per_subset.values()))


def combine_weighted(stats: SubsetStatistics) -> float:
    """W_n = sum of pi^{2|A|} B_{A,n}."""
    _require_full(stats)
    return float(sum(np.pi ** (2 * A.cardinality) * v for A, v in stats.items()))


@dataclass(frozen=True)
class DependogramRow:
    subset: SubsetMask
    value: float
    critical: float

    @property
    def exceeds(self) -> bool:
        return self.value > self.critical


def combine_dependogram(stats: SubsetStatistics, crit: Mapping[int, float]) -> tuple[float, list[DependogramRow]]:
    """M_n = max_A B_{A,n} / q_|A|; reject when M_n > 1."""
    _require_full(stats)
    return _dependogram(stats.items(), crit)


def _dependogram(items, crit):
    rows = []
    ratio = 0.0
    for A, v in items:
        if A.cardinality not in crit:
            raise ValueError(f"no critical value supplied for |A| = {A.cardinality}")
        q = float(crit[A.cardinality])
        if q <= 0:
            raise ValueError("critical values must be positive")
        rows.append(DependogramRow(A, v, q))
        ratio = max(ratio, v / q)
    return ratio, rows


def _fisher(items, cdf) -> float:
    total = 0.0
    for A, v in items:
        if hasattr(cdf, "survival"):
            sf = float(cdf.survival(A.cardinality, v))
            F = 1.0 - sf
        else:
            F = float(cdf(A.cardinality, v)) if callable(cdf) else float(cdf[A.cardinality](v))
            sf = 1.0 - F
        if sf < SF_FLOOR:
            warnings.warn(f"null cdf of B_A for A={A} saturated at {F!r}; 1 - F floored at {SF_FLOOR}",
                          CdfSaturationWarning, stacklevel=3)
            sf = SF_FLOOR
        total += -2.0 * math.log(sf)
    return total


def combine_fisher(stats: SubsetStatistics, cdf) -> float:
    """T_n = -2 sum_A log{1 - F_|A|(B_{A,n})}.

    ``cdf`` is either a callable (k, x) -> F_k(x) or a mapping k -> callable.
    """
    _require_full(stats)
    return _fisher(stats.items(), cdf)


def _pairs_items(stats: SubsetStatistics):
    return [(A, v) for A, v in stats.items() if A.cardinality == 2]


def combine_linear2(stats: SubsetStatistics) -> float:
    return float(sum(v for _, v in _pairs_items(stats)))


def combine_dependogram2(stats: SubsetStatistics, crit: Mapping[int, float] | float):
    if not isinstance(crit, Mapping):
        crit = {2: float(crit)}
    return _dependogram(_pairs_items(stats), crit)


def combine_fisher2(stats: SubsetStatistics, cdf) -> float:
    return _fisher(_pairs_items(stats), cdf)


def fisher_p_value(T: float, terms: int) -> float:
    return float(sps.chi2.sf(T, 2 * terms))


# ---------------------------------------------------------------------------
# asymptotic null distributions of B_A


@lru_cache(maxsize=16)
def null_survival_table(k: int) -> NullSurvivalTable:
    return NullSurvivalTable(null_law(k))


@lru_cache(maxsize=32)
def combined_survival_table(stat: str, d: int) -> NullSurvivalTable:
    return NullSurvivalTable(combined_law(stat, d))


class AsymptoticNull:
    """Limit null cdf F_k of B_{A,n}, |A| = k; ``survival`` avoids the 1 - F cancellation."""

    def __init__(self, exact_tail: bool = False):
        self.exact_tail = exact_tail

    def __call__(self, k: int, x: float) -> float:
        return 1.0 - self.survival(k, x)

    def survival(self, k: int, x: float) -> float:
        return float(null_survival_table(k)(x, exact=self.exact_tail))


asymptotic_cdf = AsymptoticNull()


@lru_cache(maxsize=64)
def dependogram_quantiles(d: int, alpha: float, pairwise: bool = False) -> dict[int, float]:
    """q_k at the per-subset level alpha' (or alpha'' for pairs), by inversion."""
    cv = critical_value("M2" if pairwise else "M", d, alpha, "inversion")
    return dict(cv.value)


# ---------------------------------------------------------------------------
# finite-sample null simulation


@dataclass
class NullSimulation:
    n: int
    d: int
    subsets: list[SubsetMask]
    subset_values: np.ndarray  # (reps, len(subsets))
    global_values: np.ndarray  # (reps,)

    def empirical_cdf(self, k: int) -> Callable[[float], float]:
        cols = [i for i, A in enumerate(self.subsets) if A.cardinality == k]
        pooled = np.sort(self.subset_values[:, cols].ravel())
        return lambda x: float(np.searchsorted(pooled, x, side="right") / (pooled.size + 1))


def simulate_null(n: int, d: int, reps: int, seed=None) -> NullSimulation:
    """All subset statistics and B_n for ``reps`` rank samples drawn under independence."""
    rng = np.random.default_rng(seed)
    subsets = all_subsets(d)
    vals = np.empty((reps, len(subsets)))
    glob = np.empty(reps)
    base = np.arange(1, n + 1)
    for r in range(reps):
        R = np.column_stack([rng.permutation(base) for _ in range(d)])
        vals[r] = subset_values(R, subsets)
        glob[r] = cvm_global(R)
    return NullSimulation(n, d, subsets, vals, glob)


def _statistics_from_simulation(sim: NullSimulation, stat: str, alpha: float,
                                fisher_cdf: str = "asymptotic") -> np.ndarray | dict:
    card = np.array([A.cardinality for A in sim.subsets])
    if stat == "B":
        return sim.global_values
    if stat == "L":
        return sim.subset_values.sum(axis=1)
    if stat == "W":
        return sim.subset_values @ (np.pi ** (2.0 * card))
    if stat == "L2":
        return sim.subset_values[:, card == 2].sum(axis=1)
    if stat in ("T", "T2"):
        cols = card == 2 if stat == "T2" else np.ones(card.size, bool)
        out = np.zeros(sim.subset_values.shape[0])
        for k in np.unique(card[cols]):
            if fisher_cdf == "asymptotic":
                sf = null_survival_table(int(k))
                vals = sf(sim.subset_values[:, card == k])
            else:
                pooled = np.sort(sim.subset_values[:, card == k].ravel())
                vals = 1.0 - np.searchsorted(pooled, sim.subset_values[:, card == k], side="right") / (pooled.size + 1)
            out += -2.0 * np.log(np.maximum(vals, SF_FLOOR)).sum(axis=1)
        return out
    if stat in ("M", "M2") or stat.startswith("q"):
        level = alpha_double_prime(alpha, sim.d) if stat == "M2" else alpha_prime(alpha, sim.d)
        sizes = [2] if stat == "M2" else ([int(stat[1:])] if stat.startswith("q") else range(2, sim.d + 1))
        res = {k: (sim.subset_values[:, card == k].ravel(), level) for k in sizes}
        if stat.startswith("q"):
            return res[sizes[0]][0]
        return res
    raise ValueError(f"unknown statistic id {stat!r}")


def null_statistics_sample(stat: str, n: int, d: int, alpha: float, reps: int, seed=None):
    """Finite-sample null draws of a statistic (per-size pooled draws with their level for M/M2)."""
    return _statistics_from_simulation(_cached_simulation(n, d, reps, seed), stat, alpha)


@lru_cache(maxsize=8)
def _cached_simulation(n: int, d: int, reps: int, seed) -> NullSimulation:
    return simulate_null(n, d, reps, seed)


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class TestConfig:
    __test__ = False

    statistics: tuple[str, ...] = ("B", "L", "W", "M", "T")
    alpha: float = 0.05
    method: str = "asymptotic"  # or "finite-sample-mc"
    seed: int = 0
    reps: int = 2000
    critical_source: str = "auto"  # auto | published | computed
    dm_grid: int = 128
    dm_reps: int = 100_000

    def __post_init__(self):
        self.statistics = tuple(s.strip().upper() if s.strip().upper() != "M2" else "M2" for s in self.statistics)
        if not self.statistics:
            raise ValueError("config must name at least one statistic")
        bad = [s for s in self.statistics if s not in ALL_STATISTICS]
        if bad:
            raise ValueError(f"unknown statistics {bad}; choose from {ALL_STATISTICS}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.method not in ("asymptotic", "finite-sample-mc"):
            raise ValueError("method must be 'asymptotic' or 'finite-sample-mc'")
        if self.critical_source not in ("auto", "published", "computed"):
            raise ValueError("critical_source must be auto, published or computed")


@dataclass
class StatisticResult:
    name: str
    value: float
    critical: float
    p_value: float | None
    reject: bool
    critical_source: str = ""
    published_critical: float | None = None


@dataclass
class TestReport:
    __test__ = False

    config: dict
    statistics: list[StatisticResult]
    dependogram: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> StatisticResult:
        for s in self.statistics:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def rejected(self) -> bool:
        return any(s.reject for s in self.statistics)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "statistics": [asdict(s) for s in self.statistics],
            "dependogram": self.dependogram,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


# statistics whose published asymptotic value is used when available; per-size quantiles are
# recomputed by inversion and the Fisher thresholds come from the chi-square law.  The published
# q_B sits below the exact limit quantile and over-rejects, so B uses the exact spectrum when
# its truncation is tabulated and the DM sampler otherwise.
_PUBLISHED_OK = ("L", "W", "L2")


def _asymptotic_critical(stat: str, d: int, cfg: TestConfig) -> tuple[float, str, float | None]:
    table = PUBLISHED_CRITICAL_VALUES.get(d, {}) if cfg.alpha == 0.05 else {}
    published = table.get(stat)
    use_pub = published is not None and (
        cfg.critical_source == "published" or (cfg.critical_source == "auto" and stat in _PUBLISHED_OK))
    if use_pub:
        return published, "published", published
    if stat in ("T", "T2"):
        return critical_value(stat, d, cfg.alpha, "chi2").value, "chi2", published
    if stat == "B":
        if d in GLOBAL_TRUNCATION:
            return critical_value("B", d, cfg.alpha, "inversion").value, "inversion", published
        cv = critical_value("B", d, cfg.alpha, "spectral-mc", reps=cfg.dm_reps, m=cfg.dm_grid, seed=cfg.seed)
        return cv.value, "spectral-mc", published
    return critical_value(stat, d, cfg.alpha, "inversion").value, "inversion", published


def run_test(data: Dataset | np.ndarray | RankMatrix, config: TestConfig | None = None) -> TestReport:
    """Ranks, subset statistics, combinations and decisions in one call."""
    cfg = config or TestConfig()
    if isinstance(data, RankMatrix):
        ranks = data
    else:
        if not isinstance(data, Dataset):
            data = Dataset(np.asarray(data, dtype=float))
        ranks = compute_ranks(data, seed=cfg.seed)
    d, n = ranks.d, ranks.n
    notes: list[str] = []
    if ranks.ties_broken:
        notes.append(f"ties broken at random (seed {cfg.seed}): per-column counts {list(ranks.tie_report)}")
    sub = SubsetStatistics.from_ranks(ranks)
    results: list[StatisticResult] = []
    dependogram: list[dict] = []
    alpha = cfg.alpha
    n_all = 2**d - d - 1
    n_pairs = d * (d - 1) // 2

    sim = None
    if cfg.method == "finite-sample-mc":
        sim = _cached_simulation(n, d, cfg.reps, cfg.seed)

    def mc_result(name, value, draws):
        crit = float(np.quantile(draws, 1 - alpha))
        p = float((1 + np.sum(draws >= value)) / (draws.size + 1))
        return StatisticResult(name, value, crit, p, bool(value > crit), "finite-sample-mc")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for stat in cfg.statistics:
            if stat == "B":
                value = cvm_global(ranks)
            elif stat == "L":
                value = combine_linear(sub)
            elif stat == "W":
                value = combine_weighted(sub)
            elif stat == "L2":
                value = combine_linear2(sub)

            if stat in ("B", "L", "W", "L2"):
                if sim is not None:
                    results.append(mc_result(stat, value, _statistics_from_simulation(sim, stat, alpha)))
                    continue
                crit, source, pub = _asymptotic_critical(stat, d, cfg)
                p = None
                if stat != "B":
                    p = float(combined_survival_table(stat, d)(value))
                results.append(StatisticResult(stat, value, crit, p, bool(value > crit), source, pub))
            elif stat in ("M", "M2"):
                pairwise = stat == "M2"
                if sim is not None:
                    draws = _statistics_from_simulation(sim, stat, alpha)
                    crit = {k: float(np.quantile(v, 1 - lvl)) for k, (v, lvl) in draws.items()}
                    source = "finite-sample-mc"
                else:
                    crit = dependogram_quantiles(d, alpha, pairwise)
                    source = "inversion"
                if pairwise:
                    value, rows = combine_dependogram2(sub, crit)
                else:
                    value, rows = combine_dependogram(sub, crit)
                # P(M > m) under the null: every subset statistic stays below m * q
                if sim is not None:
                    card = np.array([A.cardinality for A in sim.subsets])
                    scale = np.array([crit.get(int(k), np.inf) for k in card])
                    keep = card == 2 if pairwise else np.ones(card.size, bool)
                    mdraws = np.max(sim.subset_values[:, keep] / scale[keep], axis=1)
                    p = float((1 + np.sum(mdraws >= value)) / (mdraws.size + 1))
                else:
                    logp = 0.0
                    for A, _ in (_pairs_items(sub) if pairwise else sub.items()):
                        sf = null_survival_table(A.cardinality)(value * crit[A.cardinality])
                        logp += math.log1p(-min(float(sf), 1.0 - 1e-300))
                    p = float(-math.expm1(logp))
                pub = PUBLISHED_CRITICAL_VALUES.get(d, {}).get("M2") if pairwise and alpha == 0.05 else None
                results.append(StatisticResult(stat, value, 1.0, p, bool(value > 1.0), source, pub))
                if not dependogram or not pairwise:
                    dependogram = [{"subset": str(r.subset), "value": r.value, "critical": r.critical}
                                   for r in rows]
            elif stat in ("T", "T2"):
                terms = n_pairs if stat == "T2" else n_all
                if sim is not None:
                    value = (combine_fisher2 if stat == "T2" else combine_fisher)(sub, asymptotic_cdf)
                    results.append(mc_result(stat, value, _statistics_from_simulation(sim, stat, alpha)))
                    continue
                value = (combine_fisher2 if stat == "T2" else combine_fisher)(sub, AsymptoticNull(True))
                crit, source, pub = _asymptotic_critical(stat, d, cfg)
                results.append(StatisticResult(stat, value, crit, fisher_p_value(value, terms), bool(value > crit),
                                               source, pub))
        notes.extend(str(w.message) for w in caught)

    cfg_dict = asdict(cfg)
    cfg_dict.update(n=n, d=d, version=__version__, statistics=list(cfg.statistics))
    if cfg.method == "asymptotic":
        cfg_dict["truncation"] = {str(k): default_truncation(k) for k in range(2, d + 1)}
    return TestReport(cfg_dict, results, dependogram, notes)
