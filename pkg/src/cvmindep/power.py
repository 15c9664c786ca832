"""Local power under contiguous alternatives theta_n = theta_0 + delta / sqrt(n).

Analytic curves (per-subset, L, W, M and their pairwise versions) invert the
characteristic function of the shifted limit law.  B_n and Fisher's T_n
have no usable closed form and are simulated, with common random numbers
across the delta grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats

from .copulas import get_family
from .spectral import (
    Spectrum,
    alpha_double_prime,
    alpha_prime,
    cached_spectrum,
    combined_law,
    critical_value,
    dm_sample_B,
    null_law,
)
from .statistics import null_survival_table

ANALYTIC = ("L", "W", "M", "L2", "M2")
SIMULATED = ("B", "T", "T2")


def _family_name(family) -> str:
    return get_family(family).name


@lru_cache(maxsize=256)
def _inversion_quantile(stat: str, d: int, alpha: float) -> float | dict:
    return critical_value(stat, d, alpha, "inversion").value


@lru_cache(maxsize=256)
def _subset_quantile(k: int, level: float) -> float:
    return null_law(k).quantile(1.0 - level)


def beta_subset(spectrum: Spectrum, delta: float, level: float, critical: float | None = None) -> float:
    """P(B_A > q_|A|(level)) at drift scale delta."""
    q = _subset_quantile(spectrum.cardinality, level) if critical is None else critical
    law = spectrum.law(delta) if delta != 0 else null_law(spectrum.cardinality)
    return float(np.clip(law.survival(q), 0.0, 1.0))


def _beta_k(family: str, k: int, d: int, delta: float, level: float) -> float:
    return beta_subset(cached_spectrum(k, None, family, d), delta, level)


def _beta_combined(stat: str, family, d: int, delta: float, alpha: float) -> float:
    q = _inversion_quantile(stat, d, alpha)
    law = combined_law(stat, d, float(delta), _family_name(family) if delta != 0 else None)
    return float(np.clip(law.survival(q), 0.0, 1.0))


def _any_rejects(betas_and_counts) -> float:
    """1 - prod (1 - beta)^count, computed on the log scale."""
    log_keep = 0.0
    for beta, count in betas_and_counts:
        if beta >= 1.0:
            return 1.0
        log_keep += count * math.log1p(-beta)
    return float(-math.expm1(log_keep))


def beta_L(family, d: int, delta: float, alpha: float = 0.05) -> float:
    return _beta_combined("L", family, d, delta, alpha)


def beta_W(family, d: int, delta: float, alpha: float = 0.05) -> float:
    return _beta_combined("W", family, d, delta, alpha)


def beta_L2(family, d: int, delta: float, alpha: float = 0.05) -> float:
    return _beta_combined("L2", family, d, delta, alpha)


def beta_M(family, d: int, delta: float, alpha: float = 0.05) -> float:
    """1 - prod_A {1 - beta_A(alpha', delta)}, one inversion per cardinality."""
    fam = _family_name(family)
    level = alpha_prime(alpha, d)
    return _any_rejects((_beta_k(fam, k, d, delta, level), math.comb(d, k)) for k in range(2, d + 1))


def beta_M2(family, d: int, delta: float, alpha: float = 0.05) -> float:
    fam = _family_name(family)
    level = alpha_double_prime(alpha, d)
    return _any_rejects([(_beta_k(fam, 2, d, delta, level), math.comb(d, 2))])


# ---------------------------------------------------------------------------
# simulation


def subset_draws(k: int, d: int, family, deltas: Sequence[float], reps: int, rng: np.random.Generator,
                 head: int = 256) -> np.ndarray:
    """Draws of B_A (|A| = k) for every delta, sharing the underlying normals.

    A group of m equal eigenvalues with coefficient energy b contributes
    lambda {(Z + delta sqrt(b))^2 + chi2_{m-1}}, an exact representation of
    its noncentral chi-square.  Groups past ``head`` and the truncation
    remainder are replaced by a gamma variable with matching mean and
    variance, coupled across delta through a common uniform.
    """
    deltas = np.asarray(deltas, dtype=float)
    fam = _family_name(family) if family is not None else None
    spec = cached_spectrum(k, None, fam, d if fam else None)
    lam = spec.group_lam
    mult = spec.multiplicity
    b = spec.coef_sq if fam else np.zeros(lam.size)
    H = min(head, lam.size)
    Z = rng.standard_normal((reps, H))
    rest_df = mult[:H] - 1
    G = np.where(rest_df > 0, 2.0 * rng.standard_gamma(np.maximum(rest_df, 1e-300) / 2, size=(reps, H)), 0.0)
    U = rng.random(reps)
    base = G @ lam[:H]
    out = np.empty((deltas.size, reps))
    rl, rm, rb = lam[H:], mult[H:], b[H:]
    for i, dl in enumerate(deltas):
        shift = dl * np.sqrt(b[:H])
        vals = base + ((Z + shift) ** 2) @ lam[:H]
        mean = float(np.sum(rl * (rm + dl**2 * rb)) + spec.T1)
        var = float(np.sum(2 * rl**2 * (rm + 2 * dl**2 * rb)) + 2 * spec.T2)
        if var > 0:
            shape = mean**2 / var
            vals += stats.gamma.ppf(U, shape, scale=var / mean)
        else:
            vals += mean
        out[i] = vals
    return out


def _draws_by_subset(family, d: int, deltas, reps: int, seed, sizes, head: int):
    rng = np.random.default_rng(seed)
    out = []
    for k in sizes:
        for _ in range(math.comb(d, k)):
            out.append((k, subset_draws(k, d, family, deltas, reps, rng, head)))
    return out


def beta_mc(statistic: str, family, d: int, deltas, alpha: float = 0.05, reps: int = 10_000, seed=0,
            head: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo power from limit-law draws; returns (beta, standard error) over ``deltas``.

    ``statistic`` is one of L, W, L2, M, M2, T, T2.
    """
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    pairwise = statistic in ("L2", "M2", "T2")
    sizes = [2] if pairwise else list(range(2, d + 1))
    draws = _draws_by_subset(family, d, deltas, reps, seed, sizes, head)
    if statistic in ("L", "L2", "W"):
        total = sum((np.pi ** (2 * k) if statistic == "W" else 1.0) * x for k, x in draws)
        reject = total > _inversion_quantile(statistic, d, alpha)
    elif statistic in ("M", "M2"):
        q = _inversion_quantile(statistic, d, alpha)
        ratio = np.max(np.stack([x / q[k] for k, x in draws]), axis=0)
        reject = ratio > 1.0
    elif statistic in ("T", "T2"):
        total = np.zeros((deltas.size, reps))
        for k, x in draws:
            total += -2.0 * np.log(np.maximum(null_survival_table(k)(x), 1e-15))
        terms = len(draws)
        reject = total > stats.chi2.ppf(1 - alpha, 2 * terms)
    else:
        raise ValueError(f"no Monte Carlo power for statistic {statistic!r}")
    beta = reject.mean(axis=1)
    return beta, np.sqrt(beta * (1 - beta) / reps)


def beta_T_mc(family, d: int, delta, alpha: float = 0.05, reps: int = 10_000, seed=0, pairwise: bool = False,
              head: int = 256):
    """Fisher's T (or T2): proportion of simulated T_i above the chi-square critical value."""
    if reps < 1000:
        raise ValueError("use at least 1000 replications")
    beta, se = beta_mc("T2" if pairwise else "T", family, d, delta, alpha, reps, seed, head)
    if np.ndim(delta) == 0:
        return float(beta[0]), float(se[0])
    return beta, se


def default_B_critical(d: int, alpha: float, m: int = 128, reps: int = 100_000) -> float:
    """q_B(alpha) from the same Deheuvels-Martynov sampler, so that beta_B(0) = alpha."""
    return critical_value("B", d, alpha, "spectral-mc", m=m, reps=reps, seed=0).value


def beta_B_mc(family, d: int, delta, alpha: float = 0.05, m: int = 128, reps: int = 10_000, seed=0,
              critical: float | None = None):
    """Proportion of Deheuvels-Martynov draws of the limit of B_n above q_B(alpha)."""
    q = default_B_critical(d, alpha, m) if critical is None else critical
    draws = dm_sample_B(m, np.atleast_1d(np.asarray(delta, dtype=float)), family, d, seed, reps)
    beta = (draws > q).mean(axis=1)
    se = np.sqrt(beta * (1 - beta) / reps)
    if np.ndim(delta) == 0:
        return float(beta[0]), float(se[0])
    return beta, se


# ---------------------------------------------------------------------------
# curves


@dataclass
class PowerCurve:
    statistic: str
    family: str
    d: int
    alpha: float
    deltas: np.ndarray
    betas: np.ndarray
    method: str
    stderr: np.ndarray | None = None
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.betas = np.clip(np.asarray(self.betas, dtype=float), 0.0, 1.0)

    def rows(self) -> list[tuple]:
        se = self.stderr if self.stderr is not None else [None] * self.deltas.size
        return [(float(dl), float(b), None if s is None else float(s)) for dl, b, s in zip(self.deltas, self.betas, se)]

    def header(self) -> dict:
        return {"statistic": self.statistic, "family": self.family, "d": self.d, "alpha": self.alpha,
                "method": self.method, **self.settings}


def power_curve(statistic: str, family, d: int, alpha: float = 0.05, delta_max: float = 3.0, points: int = 20,
                reps: int = 10_000, seed=0, m: int = 128, head: int = 256) -> PowerCurve:
    """beta over an even delta grid on [0, delta_max]."""
    if points < 2:
        raise ValueError("a curve needs at least 2 points")
    fam = _family_name(family)
    deltas = np.linspace(0.0, delta_max, points)
    if statistic in ANALYTIC:
        fn = {"L": beta_L, "W": beta_W, "M": beta_M, "L2": beta_L2, "M2": beta_M2}[statistic]
        betas = np.array([fn(fam, d, dl, alpha) for dl in deltas])
        return PowerCurve(statistic, fam, d, alpha, deltas, betas, "analytic-inversion",
                          settings={"truncation": {k: cached_spectrum(k).truncation for k in range(2, d + 1)}})
    if statistic == "B":
        betas, se = beta_B_mc(fam, d, deltas, alpha, m, reps, seed)
        return PowerCurve(statistic, fam, d, alpha, deltas, betas, "monte-carlo", se,
                          {"m": m, "reps": reps, "seed": seed})
    if statistic in ("T", "T2"):
        betas, se = beta_T_mc(fam, d, deltas, alpha, reps, seed, pairwise=statistic == "T2", head=head)
        return PowerCurve(statistic, fam, d, alpha, deltas, betas, "monte-carlo", se,
                          {"reps": reps, "seed": seed, "head": head})
    raise ValueError(f"unknown statistic {statistic!r}; choose from {ANALYTIC + SIMULATED}")
