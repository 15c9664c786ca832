"""Acceptance criteria 1-12.

Each test records one "criterion N: PASS/FAIL" line with the numbers behind
it; the lines are printed together at the end of the session (see
conftest.py) and each test asserts its own verdict.
"""

import math
from itertools import product

import numpy as np
import pytest
from scipy import stats

from cvmindep.copulas import drift_norm
from cvmindep.efficiency import are_table, curvature, fd_curvature, mixture_derivative_check, tail_rate_check
from cvmindep.power import beta_L, beta_M, beta_M2, beta_W, power_curve
from cvmindep.ranks import RankMatrix, all_subsets, copula_count, grid_point, mobius_sum
from cvmindep.spectral import (
    PUBLISHED_CRITICAL_VALUES,
    cached_spectrum,
    critical_value,
    null_law,
    sample_limit_QA,
)
from cvmindep.statistics import (
    TestConfig,
    _asymptotic_critical,
    _statistics_from_simulation,
    cvm_global,
    cvm_subset,
    dependogram_quantiles,
    simulate_null,
)
from conftest import cell_sum_global, cell_sum_subset, random_ranks

pytestmark = pytest.mark.acceptance

RESULTS = {}
ALPHA = 0.05


def record(n, checks, extra=""):
    """checks: list of (label, ok, detail)."""
    ok = all(c[1] for c in checks)
    failed = [f"{lab}: {det}" for lab, good, det in checks if not good]
    shown = failed if failed else [f"{lab}: {det}" for lab, _, det in checks]
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  " + "; ".join(shown)
    if extra:
        line += f"  [{extra}]"
    RESULTS[n] = line
    assert ok, line


def near(label, value, target, tol, rel=False):
    err = abs(value - target) / abs(target) if rel else abs(value - target)
    unit = "rel" if rel else "abs"
    return label, err <= tol, f"{value:.6g} vs {target:.6g} ({unit} err {err:.3g}, tol {tol:g})"


def _qk_tol(k):
    # absolute tolerances as stated for q2 and q3; the same relative size for higher orders
    return {2: (0.001, False), 3: (0.0005, False)}.get(k, (0.0005 / 0.01006, True))


def test_criterion_01_table1():
    checks = []
    extra = []
    for d in (3, 4, 5):
        pub = PUBLISHED_CRITICAL_VALUES[d]
        b = critical_value("B", d, ALPHA, "spectral-mc", m=128, reps=100_000, seed=0).value
        checks.append(near(f"q_B d={d}", b, pub["B"], 0.002))
        L = critical_value("L", d, ALPHA, "spectral-mc", reps=100_000, seed=0).value
        checks.append(near(f"q_L d={d}", L, pub["L"], 0.003))
        W = critical_value("W", d, ALPHA, "spectral-mc", reps=1_000_000, seed=0).value
        checks.append(near(f"q_W d={d}", W, pub["W"], 0.01, rel=True))
        for k in range(2, d + 1):
            tol, rel = _qk_tol(k)
            q = critical_value(f"q{k}", d, ALPHA, "inversion").value
            checks.append(near(f"q{k} d={d}", q, pub[f"q{k}"], tol, rel))
        if d <= 4:
            extra.append(f"exact-spectrum q_B d={d} {critical_value('B', d, ALPHA, 'inversion').value:.5f}")
        extra.append(f"chi2 q_T d={d} {critical_value('T', d, ALPHA, 'chi2').value:.4f} vs {pub['T']}")
    record(1, checks, "; ".join(extra))


def test_criterion_02_table2():
    pub = PUBLISHED_CRITICAL_VALUES[3]
    L2 = critical_value("L2", 3, ALPHA, "spectral-mc", reps=100_000, seed=0).value
    q2 = critical_value("M2", 3, ALPHA, "inversion").value[2]
    T2 = critical_value("T2", 3, ALPHA, "spectral-mc", reps=100_000, seed=0)
    chi = critical_value("T2", 3, ALPHA, "chi2").value
    checks = [
        near("q_L2", L2, pub["L2"], 0.003),
        near("q2(alpha'')", q2, pub["M2"], 0.001),
        near("q_T2", T2.value, pub["T2"], 3 * T2.stderr),
    ]
    record(2, checks, f"chi2_6 quantile {chi:.4f}; MC q_T2 stderr {T2.stderr:.3g}")


TABLE3 = {
    "gaussian": [98.56, 100, 44.66, 88.78, 79.45],
    "fgm": [3.71, 0, 100, 0, 32.95],
    "frank": [99.34, 100, 65.28, 88.92, 86.09],
    "clayton": [98.55, 100, 43.27, 87.21, 79.79],
}


def test_criterion_03_table3():
    order = ["L", "L2", "M", "M2", "W"]
    rows = are_table(list(TABLE3), order, 3, ALPHA)
    checks = []
    for r in rows:
        for s, target in zip(order, TABLE3[r.family]):
            checks.append(near(f"{r.family}/{s}", r.percent[s], target, 1.0))
    record(3, checks)


# power grids: the delta scale of the figures is not given, so each family gets a range
# over which the curves rise from the level towards one
DELTA_MAX = {"gaussian": 4.0, "fgm": 25.0, "frank": 20.0, "clayton": 4.0}
TIE = 1e-6  # inversion accuracy; curves coincide exactly at delta = 0


def test_criterion_04_orderings():
    checks = []
    for fam, dm in DELTA_MAX.items():
        stats_ = ["L", "W", "M", "T"] + (["M2"] if fam == "gaussian" else []) + (["B"] if fam == "clayton" else [])
        c = {s: power_curve(s, fam, 3, ALPHA, dm, 20, reps=10_000, seed=0) for s in stats_}
        b = {s: v.betas for s, v in c.items()}
        se = {s: (v.stderr if v.stderr is not None else np.zeros_like(v.betas)) for s, v in c.items()}

        def weakest(s):
            others = [o for o in ("L", "W", "M", "T") if o != s]
            margin = min(np.min(b[o] + 3 * np.hypot(se[o], se[s]) + TIE - b[s]) for o in others)
            return f"{s} weakest {fam}", margin >= 0, f"min margin {margin:.3g}"

        if fam == "fgm":
            checks.append(weakest("L"))
        else:
            checks.append(weakest("M"))
        gap = np.max(np.abs(b["W"] - b["T"]) - 3 * se["T"])
        checks.append((f"W~T {fam}", gap <= 0.03, f"max |W-T| - 3se {gap:.3g}"))
        if fam == "gaussian":
            m = np.min(b["M2"] - b["M"] + TIE)
            checks.append(("M2>=M gaussian", m >= 0, f"min margin {m:.3g}"))
        if fam == "clayton":
            m = min(np.min(b["B"] + 3 * np.hypot(se["B"], se[o]) - b[o]) for o in ("L", "W", "M", "T"))
            checks.append(("B best clayton", m >= 0, f"min margin {m:.3g}"))
    record(4, checks, "20-point grids on [0, delta_max], delta_max " + str(DELTA_MAX))


def test_criterion_05_rank_formulas():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(2, 4))
        r = random_ranks(rng, n, d)
        worst = max(worst, abs(cvm_global(r) - float(cell_sum_global(r))))
        for A in all_subsets(d):
            worst = max(worst, abs(cvm_subset(r, A) - float(cell_sum_subset(r, A))))
    record(5, [("max |formula - cell sum|", worst < 1e-12, f"{worst:.3g} over 200 instances")])


def test_criterion_06_mobius_reconstruction():
    rng = np.random.default_rng(6)
    bad = 0
    points = 0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(2, 5))
        r = random_ranks(rng, n, d)
        subsets = all_subsets(d)
        for idx in product(range(n + 1), repeat=d):
            u = grid_point(idx, n)
            lhs = copula_count(r, u) - n * math.prod(u)
            rhs = sum(mobius_sum(r, A, u) * math.prod(u[j] for j in range(d) if j not in A.indices)
                      for A in subsets)
            bad += lhs != rhs
            points += 1
    record(6, [("exact mismatches", bad == 0, f"{bad} of {points} grid points, 100 matrices")])


def test_criterion_07_moments():
    checks = []
    for k in (2, 3):
        x = sample_limit_QA(cached_spectrum(k), 0.0, seed=70 + k, reps=100_000)
        m, v = x.mean(), x.var(ddof=1)
        se_m = x.std(ddof=1) / math.sqrt(x.size)
        se_v = math.sqrt(np.mean((x - m) ** 4) - v**2) / math.sqrt(x.size)
        for lab, est, target, se in (("mean", m, 6.0**-k, se_m), ("var", v, 2 * 90.0**-k, se_v)):
            z = (est - target) / se
            checks.append((f"{lab} |A|={k}", abs(z) <= 3, f"{est:.6g} vs {target:.6g} ({z:+.2f} se)"))
    record(7, checks)


def test_criterion_08_inversion_vs_draws():
    checks = []
    for k, delta in product((2, 3), (0.0, 1.0)):
        spec = cached_spectrum(k, None, "frank", 3)
        x = np.sort(sample_limit_QA(spec, delta, seed=80 + k, reps=100_000))
        F = 1.0 - spec.law(delta).survival(x)
        i = np.arange(1, x.size + 1)
        D = max(np.max(i / x.size - F), np.max(F - (i - 1) / x.size))
        checks.append((f"|A|={k} delta={delta:g}", D < 0.01, f"KS {D:.4f}"))
    record(8, checks, "drift family frank")


def test_criterion_09_parseval():
    checks = []
    for fam, k in (("frank", 2), ("clayton", 2), ("gaussian", 2), ("fgm", 3)):
        spec = cached_spectrum(k, None, fam, 3)
        target = drift_norm(fam, k, 3)
        checks.append(near(f"{fam} |A|={k}", spec.drift_energy(), target, 1e-4, rel=True))
    assert drift_norm("frank", 2, 3) == pytest.approx(1 / 3600, rel=1e-15)
    record(9, checks)


def test_criterion_10_curvature_vs_slope():
    fns = {"L": beta_L, "W": beta_W, "M": beta_M}
    checks = []
    for fam in ("frank", "gaussian", "clayton"):
        for s, fn in fns.items():
            a = curvature(s, fam, 3, ALPHA)
            fd = fd_curvature(lambda dl: fn(fam, 3, dl, ALPHA), ALPHA)
            checks.append(near(f"{s}/{fam}", a, fd, 0.02, rel=True))
    record(10, checks, "slope fit on delta in {0.1, 0.2, 0.4} with a delta^4 term")


def test_criterion_11_level():
    reps = 10_000
    sim = simulate_null(200, 3, reps, seed=11)
    cfg = TestConfig()
    se = math.sqrt(ALPHA * (1 - ALPHA) / reps)
    card = np.array([A.cardinality for A in sim.subsets])
    checks = []
    for s in ("B", "L", "W", "T", "L2", "T2"):
        crit, source, _ = _asymptotic_critical(s, 3, cfg)
        size = float(np.mean(_statistics_from_simulation(sim, s, ALPHA) > crit))
        checks.append((s, abs(size - ALPHA) <= 3 * se, f"{size:.4f} ({source})"))
    for s, pw in (("M", False), ("M2", True)):
        q = dependogram_quantiles(3, ALPHA, pw)
        keep = card == 2 if pw else np.ones(card.size, bool)
        scale = np.array([q.get(int(c), np.inf) for c in card])
        size = float(np.mean(np.max(sim.subset_values[:, keep] / scale[keep], axis=1) > 1))
        checks.append((s, abs(size - ALPHA) <= 3 * se, f"{size:.4f}"))
    record(11, checks, f"n=200, d=3, {reps} reps, 3se = {3 * se:.4f}")


def test_criterion_12_appendix():
    w = 1.0 / np.arange(1, 11) ** 2
    mu = np.linspace(1.0, 0.2, 10)
    checks = []
    for x in (1.0, 2.0, 4.0):
        fd, formula = mixture_derivative_check(w, mu, x)
        checks.append(near(f"A.2 x={x:g}", fd, formula, 1e-3, rel=True))
    r = tail_rate_check(null_law(2))
    checks.append(("A.1 slope ratio |A|=2", 0.9 <= r.ratio <= 1.1, f"{r.ratio:.4f}"))
    record(12, checks)
