"""Local asymptotic relative efficiency through power curvatures at delta = 0.

The curvature of a test is lim_{delta -> 0} {beta(alpha, delta) - alpha} / delta^2.
For a law X_delta = sum_k w_k (Z_k + delta mu_k)^2 its delta^2-derivative
at x is sum_k w_k mu_k^2 h_k(x), h_k the density of X_0 + w_k chi2_2.  The
sum is linear in the h_k, so it is evaluated as a single inversion of
phi_0(t) sum_k c_k / (1 - 2 i w_k t) rather than one inversion per term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .copulas import get_family
from .spectral import (
    Inverter,
    QuadraticForm,
    alpha_double_prime,
    alpha_prime,
    cached_spectrum,
    combined_law,
    gil_pelaez_survival,
    null_law,
)
from .power import _inversion_quantile, _subset_quantile

CURVATURE_STATISTICS = ("L", "L2", "M", "M2", "W")


def shifted_density(base: QuadraticForm | None, w: float, x) -> np.ndarray:
    """Density at x of base + w chi2_2 (an exponential law of mean 2w when base is None)."""
    if w <= 0:
        raise ValueError("extra weight must be positive")
    if base is None:
        # 1/t decay of the cf defeats the inversion; the law is exponential
        return stats.expon.pdf(x, scale=2.0 * w)
    return base.with_extra(w, 2.0).density(x)


def _mixed_density(base: QuadraticForm, weights: np.ndarray, coefs: np.ndarray, x: float) -> float:
    """sum_k coefs_k * density of (base + weights_k chi2_2) at x, by one inversion."""
    if coefs.size == 0 or not np.any(coefs):
        return 0.0

    def cf(t):
        t = np.asarray(t, dtype=float)
        step = max(1, 2_000_000 // weights.size)
        flat = t.ravel()
        res = np.empty(flat.size, dtype=complex)
        for lo in range(0, flat.size, step):
            tt = flat[lo:lo + step, None]
            res[lo:lo + step] = np.sum(coefs / (1.0 - 2j * weights * tt), axis=1)
        return base.cf(t) * res.reshape(t.shape)

    total = float(np.sum(coefs))
    # the mixture is a positive combination of laws with mean at most base.mean + 2 max w
    inv = Inverter(cf, x, base.mean + 2 * float(np.max(weights)), base.sd + 2 * float(np.max(weights)),
                   target="density")
    vals = np.real(np.exp(-1j * x * inv.t) * inv.phi)
    return float(inv.h * (0.5 * total + np.sum(vals) - 0.5 * vals[-1]) / np.pi)


def subset_curvature_terms(family, k: int, d: int, weight_scale: float = 1.0):
    """(extra weights, coefficients) of the delta^2-derivative for one subset of size k."""
    spec = cached_spectrum(k, None, get_family(family).name, d)
    w = spec.group_lam * weight_scale
    c = w * spec.coef_sq
    keep = c > 0
    return w[keep], c[keep]


def _subset_curvature(family, k: int, d: int, level: float) -> float:
    w, c = subset_curvature_terms(family, k, d)
    return _mixed_density(null_law(k), w, c, _subset_quantile(k, level))


def curvature(statistic: str, family, d: int, alpha: float = 0.05, k: int | None = None,
              level: float | None = None) -> float:
    """Analytic curvature of L, L2, W, M, M2, or of a single subset of size ``k`` ("subset")."""
    fam = get_family(family).name
    if statistic == "subset":
        if k is None:
            raise ValueError("subset curvature needs the cardinality k")
        return _subset_curvature(fam, k, d, alpha if level is None else level)
    if statistic in ("L", "W", "L2"):
        sizes = [2] if statistic == "L2" else range(2, d + 1)
        base = combined_law(statistic, d)
        ws, cs = [], []
        for kk in sizes:
            scale = np.pi ** (2 * kk) if statistic == "W" else 1.0
            w, c = subset_curvature_terms(fam, kk, d, scale)
            ws.append(w)
            cs.append(c * math.comb(d, kk))
        w = np.concatenate(ws)
        c = np.concatenate(cs)
        return _mixed_density(base, w, c, _inversion_quantile(statistic, d, alpha))
    if statistic == "M":
        lvl = alpha_prime(alpha, d)
        total = sum(math.comb(d, kk) * _subset_curvature(fam, kk, d, lvl) for kk in range(2, d + 1))
        return (1 - alpha) / (1 - lvl) * total
    if statistic == "M2":
        lvl = alpha_double_prime(alpha, d)
        return (1 - alpha) / (1 - lvl) * math.comb(d, 2) * _subset_curvature(fam, 2, d, lvl)
    raise ValueError(f"no analytic curvature for {statistic!r}")


@dataclass
class CurvatureReport:
    statistic: str
    family: str
    d: int
    alpha: float
    value: float
    method: str = "analytic"
    settings: dict = field(default_factory=dict)


@dataclass
class AreRow:
    family: str
    best: str
    curvatures: dict
    percent: dict


def are_table(families: Sequence[str] = ("gaussian", "fgm", "frank", "clayton"),
              statistics: Sequence[str] = CURVATURE_STATISTICS, d: int = 3, alpha: float = 0.05) -> list[AreRow]:
    """Curvature of each statistic as a percentage of the best one, per family."""
    rows = []
    for fam in families:
        name = get_family(fam).name
        curv = {s: curvature(s, name, d, alpha) for s in statistics}
        best = max(curv, key=curv.get)
        top = curv[best]
        pct = {s: (100.0 * v / top if top > 0 else float("nan")) for s, v in curv.items()}
        rows.append(AreRow(name, best, curv, pct))
    return rows


# ---------------------------------------------------------------------------
# numerical oracles and diagnostics


def fd_curvature(power_fn, alpha: float, deltas: Sequence[float] = (0.1, 0.2, 0.4), quartic: bool = True) -> float:
    """Least-squares delta^2 coefficient of beta - alpha, fitted through the origin.

    With ``quartic`` a delta^4 term is fitted alongside so that the
    curvature of the power function does not bias the slope.
    """
    x = np.asarray(deltas, dtype=float) ** 2
    y = np.array([power_fn(dl) for dl in deltas]) - alpha
    X = np.column_stack([x, x**2]) if quartic else x[:, None]
    return float(np.linalg.lstsq(X, y, rcond=None)[0][0])


def _toy_cf(weights, mu, s):
    weights = np.asarray(weights, float)
    mu = np.asarray(mu, float)

    def cf(t):
        t = np.asarray(t, float)[..., None]
        z = 1.0 - 2j * weights * t
        return np.exp(np.sum(-0.5 * np.log(z) + s * mu**2 * 1j * weights * t / z, axis=-1))

    return cf


def mixture_derivative_check(weights: Sequence[float], mu: Sequence[float], x: float, step: float = 1e-2):
    """Compare d/d(delta^2) P(X_delta > x) at 0 with sum_k w_k mu_k^2 h_k(x).

    The derivative is a central difference in s = delta^2 (the law extends
    analytically to s < 0), Richardson-extrapolated from steps h and h/2.
    Returns (finite difference, formula).
    """
    weights = np.asarray(weights, float)
    mu = np.asarray(mu, float)
    mean0 = float(np.sum(weights))
    sd0 = float(np.sqrt(2 * np.sum(weights**2)))

    def sf(s):
        mean = mean0 + s * float(np.sum(weights * mu**2))
        return float(gil_pelaez_survival(_toy_cf(weights, mu, s), x, mean=mean, sd=sd0 * 1.5))

    def central(h):
        return (sf(h) - sf(-h)) / (2 * h)

    fd = (4 * central(step / 2) - central(step)) / 3
    base = QuadraticForm(weights, np.ones_like(weights), np.zeros_like(weights))
    formula = _mixed_density(base, weights, weights * mu**2, x)
    return fd, formula


@dataclass
class TailRate:
    slope: float
    theoretical: float
    ratio: float
    x: np.ndarray
    log_survival: np.ndarray


def tail_rate_check(law: QuadraticForm, x_grid: Sequence[float] | None = None) -> TailRate:
    """Fitted slope of log P(X > x) far in the tail, against -1/(2 w_1)."""
    if x_grid is None:
        x_grid = law.mean + law.sd * np.linspace(20, 60, 9)
    x = np.asarray(x_grid, dtype=float)
    sf = law.tail_survival(x)
    ok = sf > 0
    if ok.sum() < 2:
        raise ValueError("survival underflowed on the whole grid; choose smaller x")
    slope = float(np.polyfit(x[ok], np.log(sf[ok]), 1)[0])
    theory = -0.5 / law.max_weight
    return TailRate(slope, theory, slope / theory, x[ok], np.log(sf[ok]))
