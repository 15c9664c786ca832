"""Limit laws of the Cramer-von Mises statistics and their inversion.

Under contiguous alternatives the limit of B_{A,n} is the weighted sum
sum_gamma lambda_gamma (Z_gamma + delta I_{gamma,A})^2 with
lambda_gamma = prod_j (pi gamma_j)^{-2}.  Multi-indices with the same
product gamma_1 ... gamma_k share an eigenvalue, so the truncated sum is
stored as a short list of scaled noncentral chi-square terms
(:class:`QuadraticForm`).  The part of the spectrum beyond the truncation
enters through its exact power sums, obtained from Hurwitz zeta values.

Distribution functions come from Gil-Pelaez inversion with the trapezoidal
rule.  The global statistic B_n has no product-form expansion; its limit is
sampled with the Deheuvels-Martynov device, and for d <= 4 its null law is
also available as a diagonalized quadratic form in the subset sine bases.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import interpolate, special, stats

from . import __version__
from .copulas import _cdot, fourier_coeffs, get_family


class ConvergenceError(RuntimeError):
    """The characteristic function did not decay enough before the cutoff limit."""


TAIL_ORDERS = 8
MAX_INDICES = 10**8

_DEFAULT_TRUNCATION = {2: 40, 3: 40, 4: 20, 5: 12}


def default_truncation(k: int) -> int:
    if k in _DEFAULT_TRUNCATION:
        return _DEFAULT_TRUNCATION[k]
    return max(3, int(round(10 ** (6 / k))))


# ---------------------------------------------------------------------------
# quadratic forms in Gaussian variables


@dataclass(frozen=True)
class QuadraticForm:
    """Law of sum_g w_g chi2(df_g, nc_g) plus a central remainder.

    ``tail[j-1]`` is the j-th power sum of the neglected (central, unit df)
    weights; it enters the cumulant generating function through the series
    -1/2 log(1 - 2 w s) = sum_j (2 w s)^j / (2 j).
    """

    weights: np.ndarray
    df: np.ndarray
    nc: np.ndarray
    tail: np.ndarray = field(default_factory=lambda: np.zeros(TAIL_ORDERS))

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        df = np.broadcast_to(np.asarray(self.df, dtype=float), w.shape).copy()
        nc = np.broadcast_to(np.asarray(self.nc, dtype=float), w.shape).copy()
        if np.any(w <= 0) or np.any(df <= 0) or np.any(nc < 0):
            raise ValueError("weights and degrees of freedom must be positive, noncentralities >= 0")
        order = np.argsort(-w, kind="stable")
        tail = np.zeros(TAIL_ORDERS)
        given = np.asarray(self.tail, dtype=float)[:TAIL_ORDERS]
        tail[: given.size] = given
        object.__setattr__(self, "weights", w[order])
        object.__setattr__(self, "df", df[order])
        object.__setattr__(self, "nc", nc[order])
        object.__setattr__(self, "tail", tail)

    # -- algebra -----------------------------------------------------------

    def scaled(self, c: float) -> "QuadraticForm":
        powers = c ** np.arange(1, TAIL_ORDERS + 1)
        return QuadraticForm(self.weights * c, self.df, self.nc, self.tail * powers)

    def repeated(self, count: int) -> "QuadraticForm":
        """Sum of ``count`` independent copies."""
        return QuadraticForm(self.weights, self.df * count, self.nc * count, self.tail * count)

    def __add__(self, other: "QuadraticForm") -> "QuadraticForm":
        return QuadraticForm(
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.df, other.df]),
            np.concatenate([self.nc, other.nc]),
            self.tail + other.tail,
        ).merged()

    def with_extra(self, w: float, df: float = 2.0) -> "QuadraticForm":
        """Add an independent w * chi2(df) term."""
        return self + QuadraticForm([w], [df], [0.0])

    def merged(self, digits: int = 12) -> "QuadraticForm":
        """Combine terms with equal weights (to ``digits`` significant digits)."""
        keys = np.array([float(f"{w:.{digits}e}") for w in self.weights])
        uniq, inv = np.unique(keys, return_inverse=True)
        if uniq.size == self.weights.size:
            return self
        df = np.bincount(inv, weights=self.df)
        nc = np.bincount(inv, weights=self.nc)
        w = np.bincount(inv, weights=self.weights * self.df) / df
        return QuadraticForm(w, df, nc, self.tail)

    # -- moments -------------------------------------------------------------

    @property
    def mean(self) -> float:
        return float(np.sum(self.weights * (self.df + self.nc)) + self.tail[0])

    @property
    def var(self) -> float:
        return float(np.sum(2 * self.weights**2 * (self.df + 2 * self.nc)) + 2 * self.tail[1])

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    @property
    def max_weight(self) -> float:
        return float(self.weights[0])

    # -- transforms ------------------------------------------------------------

    def log_mgf(self, s) -> np.ndarray:
        """log E exp(s X) for complex s with Re(s) < 1/(2 max weight)."""
        s = np.asarray(s, dtype=complex)
        flat = s.ravel()
        out = np.empty(flat.shape, dtype=complex)
        w, df, nc = self.weights, self.df, self.nc
        step = max(1, 2_000_000 // max(w.size, 1))
        for lo in range(0, flat.size, step):
            ss = flat[lo:lo + step, None]
            z = 1.0 - 2.0 * w * ss
            out[lo:lo + step] = np.sum(-0.5 * df * np.log(z) + nc * w * ss / z, axis=1)
        j = np.arange(1, TAIL_ORDERS + 1)
        nz = self.tail != 0
        if np.any(nz):
            out += np.sum(self.tail[nz] * (2 * flat[:, None]) ** j[nz] / (2 * j[nz]), axis=1)
        return out.reshape(s.shape)

    def cf(self, t) -> np.ndarray:
        return np.exp(self.log_mgf(1j * np.asarray(t, dtype=float)))

    def abs_cf(self, t: float) -> float:
        return float(abs(self.cf(np.array([t]))[0]))

    # -- inversion -------------------------------------------------------------

    def inverter(self, x_max: float, **kw) -> "Inverter":
        return Inverter(self.cf, x_max, self.mean, self.sd, **kw)

    def survival(self, x, **kw):
        x = np.asarray(x, dtype=float)
        inv = self.inverter(float(np.max(x)) if x.size else 0.0, **kw)
        return inv.survival(x)

    def cdf(self, x, **kw):
        return 1.0 - self.survival(x, **kw)

    def density(self, x, **kw):
        x = np.asarray(x, dtype=float)
        kw.setdefault("target", "density")
        return self.inverter(float(np.max(x)), **kw).density(x)

    def quantile(self, p: float, xtol: float = 1e-8, **kw) -> float:
        """x with P(X <= x) = p, by bisection on the inverted cdf."""
        if not 0 < p < 1:
            raise ValueError("p must lie in (0, 1)")
        hi = self.mean + 12 * self.sd
        inv = self.inverter(hi, **kw)
        while inv.survival(hi) > 1 - p:
            hi *= 2
            inv = self.inverter(hi, **kw)
        lo = 0.0
        tol = xtol * hi
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if inv.survival(mid) > 1 - p:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def survival_printed(self, x: float, **kw) -> float:
        """P(X > x) from the real arctan/modulus form of the inversion integral.

        Written in the frequency variable u = 2t, so it shares no code path
        with :meth:`survival` beyond the trapezoidal rule itself.
        """
        w, df, nc = self.weights, self.df, self.nc
        tail = self.tail
        inv = self.inverter(x, **kw)
        u = 2.0 * inv.t
        hu = 2.0 * inv.h
        j = np.arange(1, TAIL_ORDERS + 1)
        out = np.empty(u.size)
        step = max(1, 2_000_000 // max(w.size, 1))
        for lo in range(0, u.size, step):
            uu = u[lo:lo + step, None]
            wu = w * uu
            q = 1.0 + wu * wu
            kappa = -x * uu[:, 0] / 2 + 0.5 * np.sum(df * np.arctan(wu) + nc * wu / q, axis=1)
            logzeta = np.sum(0.25 * df * np.log(q) + 0.5 * nc * wu * wu / q, axis=1)
            # arctan(z) = sum (-1)^{m} z^{2m+1}/(2m+1);  log(1+z^2) = sum (-1)^{m+1} z^{2m}/m
            odd = j[0::2]
            even = j[1::2]
            kappa += 0.5 * np.sum(tail[odd - 1] * (-1.0) ** ((odd - 1) // 2) * uu ** odd / odd, axis=1)
            logzeta += 0.25 * np.sum(tail[even - 1] * (-1.0) ** (even // 2 + 1) * uu ** even / (even // 2), axis=1)
            out[lo:lo + step] = np.sin(kappa) / (uu[:, 0] * np.exp(logzeta))
        total = 0.5 * (self.mean - x) / 2 + np.sum(out)
        return float(np.clip(0.5 + hu * total / np.pi, 0.0, 1.0))

    # -- large deviations --------------------------------------------------------

    def _cgf_derivative(self, c: float) -> float:
        w, df, nc = self.weights, self.df, self.nc
        z = 1 - 2 * w * c
        j = np.arange(1, TAIL_ORDERS + 1)
        return float(np.sum(w * df / z + nc * w / z**2) + np.sum(self.tail * (2 * c) ** (j - 1)))

    def saddlepoint(self, x: float) -> float:
        """c > 0 solving K'(c) = x, for x above the mean."""
        if x <= self.mean:
            raise ValueError("saddlepoint needs x above the mean")
        lo, hi = 0.0, 0.5 / self.max_weight
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self._cgf_derivative(mid) < x:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-14 * hi:
                break
        return 0.5 * (lo + hi)

    def tail_survival(self, x, rel_tol: float = 1e-8) -> np.ndarray:
        """P(X > x) with relative accuracy far into the upper tail.

        Integrates along the vertical line Re(s) = c through the saddlepoint,
        P(X > x) = (1/pi) int_0^inf Re{M(c + i tau) e^{-(c + i tau) x} / (c + i tau)} dtau,
        so tiny tail probabilities are not lost to cancellation against 1/2.
        Points at or below the mean use the ordinary inversion.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty(x.size)
        for i, xi in enumerate(x):
            if xi <= self.mean + 0.5 * self.sd:
                out[i] = float(self.survival(xi))
                continue
            c = self.saddlepoint(xi)
            s0 = c
            base = float(np.real(self.log_mgf(s0))) - s0 * xi
            def integrand(tau):
                s = c + 1j * tau
                return np.real(np.exp(self.log_mgf(s) - s * xi - base) / s)
            # cutoff where the tilted integrand is negligible
            K = 1.0 / self.sd
            while abs(np.exp(self.log_mgf(c + 1j * K) - (c + 1j * K) * xi - base)) / K > rel_tol * abs(1 / c):
                K *= 2
                if K > 1e12:
                    raise ConvergenceError("tilted integrand failed to decay")
            # Poisson summation: the aliases are e^{-2 pi c/h} (mass below x) and
            # e^{-(1/(2 w_1) - c) 2 pi/h} relative to P (mass above x)
            h = min(2 * np.pi * c / (-base + 30.0), 2 * np.pi * (0.5 / self.max_weight - c) / 30.0, K / 2000)
            tau = h * np.arange(0, int(math.ceil(K / h)) + 1)
            vals = integrand(tau)
            vals[0] *= 0.5
            out[i] = float(np.exp(base) * h * np.sum(vals) / np.pi)
        return out

    # -- sampling ----------------------------------------------------------------

    def sample(self, size: int, seed=None, head: int | None = None, chunk: int = 20_000) -> np.ndarray:
        """Draws from the law.

        With ``head=None`` every stored term is drawn exactly and the
        neglected remainder contributes its mean.  With ``head=h`` only the h
        largest terms are drawn exactly; the rest, remainder included, is
        replaced by a gamma variable with the same mean and variance.
        """
        rng = np.random.default_rng(seed)
        w, df, nc = self.weights, self.df, self.nc
        if head is None or head >= w.size:
            hw, hdf, hnc = w, df, nc
            rest_mean, rest_var = float(self.tail[0]), 0.0
        else:
            hw, hdf, hnc = w[:head], df[:head], nc[:head]
            rw, rdf, rnc = w[head:], df[head:], nc[head:]
            rest_mean = float(np.sum(rw * (rdf + rnc)) + self.tail[0])
            rest_var = float(np.sum(2 * rw**2 * (rdf + 2 * rnc)) + 2 * self.tail[1])
        central = bool(np.all(hnc == 0))
        out = np.empty(size)
        for lo in range(0, size, chunk):
            m = min(chunk, size - lo)
            if central:
                draws = 2.0 * rng.standard_gamma(hdf / 2, size=(m, hw.size))
            else:
                draws = rng.noncentral_chisquare(hdf, np.maximum(hnc, 1e-300), size=(m, hw.size))
            vals = draws @ hw
            if rest_var > 0:
                shape = rest_mean**2 / rest_var
                vals += rng.gamma(shape, rest_var / rest_mean, size=m)
            else:
                vals += rest_mean
            out[lo:lo + m] = vals
        return out


class Inverter:
    """Trapezoidal Gil-Pelaez inversion of a characteristic function.

    The integrand Im{e^{-ixt} phi(t)}/t is even in t, so the half-line
    trapezoidal sum (with the exact t = 0 limit, mean - x) is half the
    full-line one; by Poisson summation its only discretisation error comes
    from probability mass farther than 2 pi / h from x.  The step is set
    from the law's scale accordingly, and the cutoff K from the decay of
    |phi|.  ``target="density"`` applies the cutoff rule of the density
    integral, whose truncation error is of order |phi(K)| K rather than
    |phi(K)| / K.
    """

    def __init__(self, cf: Callable, x_max: float, mean: float, sd: float, env_tol: float = 1e-12,
                 tail_tol: float = 1e-9, k_max: float = 1e9, min_points: int = 2000, max_points: int = 20_000_000,
                 target: str = "survival"):
        if target not in ("survival", "density"):
            raise ValueError("target must be 'survival' or 'density'")
        self.cf = cf
        self.mean = float(mean)
        self.sd = float(sd)
        x_max = max(float(x_max), 0.0)
        K = 1.0 / max(self.sd, 1e-300)
        env = abs(complex(cf(np.array([K]))[0]))
        while True:
            if env < env_tol:
                break
            # integrating the oscillatory tail by parts bounds it by |phi(K)| / (pi K x)
            if target == "survival" and x_max > 0 and env / (np.pi * K * x_max) < tail_tol:
                break
            if target == "density" and env * K / np.pi < tail_tol:
                break
            if K >= k_max:
                raise ConvergenceError(f"|phi| only decayed to {env:.3g} by t = {K:.3g}")
            K *= 2
            env = abs(complex(cf(np.array([K]))[0]))
        span = x_max + self.mean + 40 * self.sd
        h = min(2 * np.pi / span, K / min_points)
        n = int(math.ceil(K / h))
        if n > max_points:
            raise ConvergenceError(f"inversion grid would need {n} points")
        self.K, self.h, self.envelope = K, h, env
        self.t = h * np.arange(1, n + 1)
        self.phi = cf(self.t)

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        out = np.empty(flat.size)
        step = max(1, 4_000_000 // self.t.size)
        for lo in range(0, flat.size, step):
            xx = flat[lo:lo + step, None]
            vals = np.imag(np.exp(-1j * xx * self.t) * self.phi) / self.t
            total = 0.5 * (self.mean - xx[:, 0]) + np.sum(vals, axis=1) - 0.5 * vals[:, -1]
            out[lo:lo + step] = 0.5 + self.h * total / np.pi
        out = np.clip(out, 0.0, 1.0)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def density(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        out = np.empty(flat.size)
        step = max(1, 4_000_000 // self.t.size)
        for lo in range(0, flat.size, step):
            xx = flat[lo:lo + step, None]
            vals = np.real(np.exp(-1j * xx * self.t) * self.phi)
            out[lo:lo + step] = self.h * (0.5 + np.sum(vals, axis=1) - 0.5 * vals[:, -1]) / np.pi
        return out.reshape(x.shape) if x.ndim else float(out[0])


def _moments_from_cf(cf: Callable) -> tuple[float, float]:
    # central differences of log phi at the origin
    eps = 1e-4
    lp = np.log(cf(np.array([eps, 2 * eps])))
    lm = np.log(cf(np.array([-eps, -2 * eps])))
    mean = float(np.imag(8 * (lp[0] - lm[0]) - (lp[1] - lm[1])) / (12 * eps))
    second = float(-np.real(-(lp[1] + lm[1]) + 16 * (lp[0] + lm[0])) / (12 * eps**2))
    return mean, math.sqrt(max(second, 1e-300))


def gil_pelaez_survival(cf: Callable, x, mean: float | None = None, sd: float | None = None, **kw):
    """P(X > x) = 1/2 + (1/pi) int_0^inf Im{e^{-ixt} phi(t)}/t dt.

    ``mean`` and ``sd`` fix the t = 0 term and the step; they are estimated
    from ``cf`` by finite differences when omitted.
    """
    if mean is None or sd is None:
        m_est, s_est = _moments_from_cf(cf)
        mean = m_est if mean is None else mean
        sd = s_est if sd is None else sd
    xa = np.asarray(x, dtype=float)
    inv = Inverter(cf, float(np.max(xa)) if xa.size else 0.0, mean, sd, **kw)
    return inv.survival(xa)


# ---------------------------------------------------------------------------
# spectra


def _tail_power_sums(k: int, N: int) -> np.ndarray:
    """sum over gamma outside {1..N}^k of lambda_gamma^j, j = 1..TAIL_ORDERS."""
    out = np.empty(TAIL_ORDERS)
    for j in range(1, TAIL_ORDERS + 1):
        scale = np.pi ** (-2 * j)
        head = scale * (special.zeta(2 * j) - special.zeta(2 * j, N + 1))
        rest = scale * special.zeta(2 * j, N + 1)
        out[j - 1] = sum(math.comb(k, i) * head ** (k - i) * rest**i for i in range(1, k + 1))
    return out


@dataclass(frozen=True)
class Spectrum:
    """Truncated Karhunen-Loeve spectrum of the product Brownian bridge on |A| axes.

    ``gammas`` enumerates {1..N}^k; ``groups`` maps each to its distinct
    product gamma_1 ... gamma_k.  ``coef`` holds I_{gamma,A} when a family
    was given.  ``tail`` holds exact power sums of the omitted eigenvalues.
    """

    cardinality: int
    truncation: int
    gammas: np.ndarray
    lam: np.ndarray
    coef: np.ndarray | None
    products: np.ndarray
    groups: np.ndarray
    multiplicity: np.ndarray
    coef_sq: np.ndarray
    tail: np.ndarray
    family: str | None = None
    dimension: int | None = None

    @property
    def group_lam(self) -> np.ndarray:
        return np.pi ** (-2.0 * self.cardinality) / self.products.astype(float) ** 2

    @property
    def T1(self) -> float:
        return float(self.tail[0])

    @property
    def T2(self) -> float:
        return float(self.tail[1])

    def law(self, delta: float = 0.0, scale: float = 1.0) -> QuadraticForm:
        """Limit law of B_A at drift scale delta, optionally multiplied by ``scale``."""
        if delta != 0 and self.coef is None:
            raise ValueError("spectrum carries no Fourier coefficients; pass a family")
        nc = delta**2 * self.coef_sq if delta != 0 else np.zeros(self.products.size)
        q = QuadraticForm(self.group_lam, self.multiplicity, nc, self.tail)
        return q.scaled(scale) if scale != 1.0 else q

    def drift_energy(self) -> float:
        """sum_gamma lambda_gamma I_gamma^2 over the enumerated indices."""
        if self.coef is None:
            raise ValueError("spectrum carries no Fourier coefficients")
        return float(np.sum(self.lam * self.coef**2))


def build_spectrum(k: int, N: int | None = None, family=None, d: int | None = None) -> Spectrum:
    """Enumerate gamma in {1..N}^k with eigenvalues and, optionally, coefficients."""
    if k < 1:
        raise ValueError("cardinality must be positive")
    N = default_truncation(k) if N is None else int(N)
    if N < 1:
        raise ValueError("truncation must be >= 1")
    if N**k > MAX_INDICES:
        raise MemoryError(f"refusing to enumerate {N}^{k} = {N**k:.3g} multi-indices")
    axes = np.arange(1, N + 1, dtype=np.int64)
    gammas = np.stack(np.meshgrid(*([axes] * k), indexing="ij"), axis=-1).reshape(-1, k)
    prod = np.prod(gammas, axis=1)
    lam = np.pi ** (-2.0 * k) / prod.astype(float) ** 2
    products, groups, mult = np.unique(prod, return_inverse=True, return_counts=True)
    coef = None
    coef_sq = np.zeros(products.size)
    fam_name = None
    if family is not None:
        fam = get_family(family)
        fam_name = fam.name
        d = k if d is None else d
        coef = fourier_coeffs(fam, k, d, gammas)
        coef_sq = np.bincount(groups, weights=coef**2, minlength=products.size)
    return Spectrum(k, N, gammas, lam, coef, products, groups, mult.astype(float), coef_sq,
                    _tail_power_sums(k, N), fam_name, d)


@lru_cache(maxsize=64)
def cached_spectrum(k: int, N: int | None = None, family: str | None = None, d: int | None = None) -> Spectrum:
    return build_spectrum(k, N, family, d)


def cf_subset_limit(t, delta: float, spectrum: Spectrum) -> np.ndarray:
    """Characteristic function of the limit of B_{A,n} at drift scale delta."""
    return spectrum.law(delta).cf(t)


@lru_cache(maxsize=32)
def null_law(k: int, N: int | None = None) -> QuadraticForm:
    """Null law of Q_A for |A| = k."""
    return cached_spectrum(k, N).law()


def qa_cdf(x, k: int, N: int | None = None):
    """P(Q_A <= x) for |A| = k."""
    x = np.asarray(x, dtype=float)
    out = 1.0 - null_law(k, N).survival(np.maximum(x, 0.0))
    return np.where(x <= 0, 0.0, out) if x.ndim else (0.0 if x <= 0 else float(out))


def qa_cdf_printed(x: float, k: int, N: int | None = None) -> float:
    """P(Q_A <= x) from the arctan/modulus form 1/2 - (1/pi) int sin(kappa0)/(t zeta0) dt."""
    if x <= 0:
        return 0.0
    return 1.0 - null_law(k, N).survival_printed(x)


def qa_quantile(p: float, k: int, N: int | None = None) -> float:
    return null_law(k, N).quantile(p)


def sample_limit_QA(spectrum: Spectrum, delta: float = 0.0, seed=None, reps: int = 100_000,
                    head: int | None = None) -> np.ndarray:
    """Draws of sum_gamma lambda_gamma (Z_gamma + delta I_gamma)^2 (truncated) plus tail mean."""
    return spectrum.law(delta).sample(reps, seed, head=head)


# ---------------------------------------------------------------------------
# global statistic B_n: Deheuvels-Martynov sampling


def lambda_cov(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Limit covariance of the copula process under independence.

    Lambda(u, v) = C(u ^ v) + (d - 1) C(u) C(v) - C(u) C(v) sum_j (u_j ^ v_j) / (u_j v_j)
    for u of shape (..., m, d) and v of shape (..., p, d); returns (..., m, p).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = u.shape[-1]
    cmin = None
    ratio = None
    for j in range(d):
        uj = u[..., :, j, None]
        vj = v[..., None, :, j]
        mn = np.minimum(uj, vj)
        r = mn / uj
        r /= vj
        cmin = mn if cmin is None else cmin * mn
        ratio = r if ratio is None else ratio + r
    cu = np.prod(u, axis=-1)[..., :, None]
    cv = np.prod(v, axis=-1)[..., None, :]
    return cmin + (cu * cv) * ((d - 1) - ratio)


def _cholesky_batch(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(S)
    eye = np.eye(S.shape[-1])
    for i in range(S.shape[0]):
        for jitter in (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8):
            try:
                out[i] = np.linalg.cholesky(S[i] + jitter * eye)
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise np.linalg.LinAlgError("covariance factorization failed after jitter 1e-8")
    return out


def dm_sample_B(m: int = 128, delta: float = 0.0, family=None, d: int = 3, seed=None, reps: int = 10_000,
                chunk: int = 64):
    """Deheuvels-Martynov draws (1/m) ||Delta(U) + V(U) Z||^2 approximating the limit of B_n.

    ``delta`` may be a sequence: the same (U, Z) are reused for every value
    (common random numbers) and an array of shape (len(delta), reps) is
    returned.
    """
    if m < 2:
        raise ValueError("grid size m must be >= 2")
    deltas = np.atleast_1d(np.asarray(delta, dtype=float))
    if np.any(deltas != 0) and family is None:
        raise ValueError("a family is needed for a nonzero drift")
    fam = get_family(family) if family is not None else None
    rng = np.random.default_rng(seed)
    out = np.empty((deltas.size, reps))
    for lo in range(0, reps, chunk):
        b = min(chunk, reps - lo)
        U = rng.random((b, m, d))
        Z = rng.standard_normal((b, m))
        V = _cholesky_batch(lambda_cov(U, U))
        noise = np.einsum("bij,bj->bi", V, Z)
        if fam is not None:
            drift = _cdot(fam.name, U)
        for i, dl in enumerate(deltas):
            xi = noise + dl * drift if dl != 0 else noise
            out[i, lo:lo + b] = np.mean(xi * xi, axis=1)
    return out if np.ndim(delta) else out[0]


GLOBAL_TRUNCATION = {2: 40, 3: 12, 4: 6}


def global_null_mean(d: int) -> float:
    """E of the limit of B_n under independence: sum_A 6^-|A| 3^-(d-|A|)."""
    return sum(math.comb(d, k) * 6.0**-k * 3.0 ** -(d - k) for k in range(2, d + 1))


@lru_cache(maxsize=8)
def global_law(d: int, N: int | None = None) -> QuadraticForm:
    """Null limit law of B_n as a Gaussian quadratic form.

    The copula process is sum_A prod_{j not in A} u_j G_A(u_A); expanding each
    G_A in its sine basis turns the integral of its square into Z' S Z with
    S built from one-dimensional integrals.  Indices run to N per coordinate;
    the omitted mass enters as a shift so that the mean is exact.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    N = N or GLOBAL_TRUNCATION.get(d)
    if N is None:
        raise ValueError(f"no default truncation for d={d}; give N")
    subsets = [A for k in range(2, d + 1) for A in itertools.combinations(range(d), k)]
    a = np.arange(1, N + 1)
    lin = math.sqrt(2) * (-1.0) ** (a + 1) / (np.pi * a)  # int sqrt2 sin(pi a u) u du
    blocks, lams = [], []
    for A in subsets:
        g = np.array(list(itertools.product(a, repeat=len(A))))
        blocks.append(g)
        lams.append(np.prod((np.pi * g) ** -2.0, axis=1))
    rows = []
    for A, ga in zip(subsets, blocks):
        row = []
        for B, gb in zip(subsets, blocks):
            blk = np.ones((len(ga), len(gb)))
            for j in range(d):
                if j in A and j in B:
                    blk *= ga[:, A.index(j), None] == gb[None, :, B.index(j)]
                elif j in A:
                    blk *= lin[ga[:, A.index(j)] - 1][:, None]
                elif j in B:
                    blk *= lin[gb[:, B.index(j)] - 1][None, :]
                else:
                    blk /= 3.0
            row.append(blk)
        rows.append(row)
    root = np.sqrt(np.concatenate(lams))
    S = root[:, None] * np.block(rows) * root[None, :]
    ev = np.linalg.eigvalsh(S)
    ev = ev[ev > 1e-15 * ev[-1]]
    shift = max(global_null_mean(d) - float(ev.sum()), 0.0)
    return QuadraticForm(ev, np.ones_like(ev), np.zeros_like(ev), tail=np.array([shift]))


# ---------------------------------------------------------------------------
# critical values

PUBLISHED_CRITICAL_VALUES = {
    # alpha = 0.05; M entries are q_|A|(alpha'), M2 entries q_2(alpha'')
    3: {"B": 0.05669, "L": 0.14045, "W": 18.50403, "q2": 0.08518, "q3": 0.01006, "T": 15.31231,
        "L2": 0.13562, "M2": 0.07479, "T2": 12.20343},
    4: {"B": 0.04124, "L": 0.26002, "W": 50.54507, "q2": 0.10126, "q3": 0.01186, "q4": 0.00159, "T": 35.09049,
        "L2": 0.23917, "M2": 0.09020, "T2": 20.32429},
    5: {"B": 0.02549, "L": 0.42046, "W": 134.38756, "q2": 0.12731, "q3": 0.01326, "q4": 0.00175, "q5": 0.00022,
        "T": 71.00888, "L2": 0.36848, "M2": 0.09714, "T2": 29.63573},
}

STATISTICS = ("B", "L", "W", "T", "L2", "T2", "M", "M2")


def alpha_prime(alpha: float, d: int) -> float:
    """Per-subset level making the dependogram's global level alpha."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if d < 2:
        raise ValueError("d must be at least 2")
    return -math.expm1(math.log1p(-alpha) / (2**d - d - 1))


def alpha_double_prime(alpha: float, d: int) -> float:
    """Per-pair level for the pairwise dependogram."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if d < 2:
        raise ValueError("d must be at least 2")
    return -math.expm1(math.log1p(-alpha) * 2 / (d * (d - 1)))


def combined_law(statistic: str, d: int, delta: float = 0.0, family=None,
                 truncation: dict | None = None) -> QuadraticForm:
    """Limit law of L, W or L2 at drift scale delta.

    Subsets of equal size share one law (every in-scope drift is symmetric),
    so each size contributes C(d, k) independent copies.
    """
    truncation = truncation or {}
    fam = get_family(family).name if family is not None else None
    if statistic == "L2":
        sizes = [2]
    elif statistic in ("L", "W"):
        sizes = range(2, d + 1)
    else:
        raise ValueError(f"no quadratic-form law for statistic {statistic!r}")
    total = None
    for k in sizes:
        spec = cached_spectrum(k, truncation.get(k), fam if delta != 0 else None, d if delta != 0 else None)
        law = spec.law(delta)
        if statistic == "W":
            law = law.scaled(np.pi ** (2 * k))
        law = law.repeated(math.comb(d, k))
        total = law if total is None else total + law
    return total


def subset_law(k: int, d: int, delta: float = 0.0, family=None, N: int | None = None) -> QuadraticForm:
    if delta == 0:
        return null_law(k, N)
    return cached_spectrum(k, N, get_family(family).name, d).law(delta)


class CriticalValueCache:
    """Versioned JSON store of critical values; writes are serialized."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._mem: dict[str, dict] = {}
        if self.path and self.path.exists():
            data = json.loads(self.path.read_text())
            self._mem.update(data.get("records", {}))

    @staticmethod
    def key(statistic: str, d: int, alpha: float, method: str, settings: dict) -> str:
        blob = json.dumps(settings, sort_keys=True)
        digest = hashlib.sha256(blob.encode()).hexdigest()[:16]
        return f"{statistic}|d={d}|alpha={alpha!r}|{method}|{digest}"

    def get(self, key: str) -> dict | None:
        rec = self._mem.get(key)
        if rec is not None and rec.get("version") == __version__:
            return rec
        return None

    def put(self, key: str, record: dict) -> None:
        with self._lock:
            self._mem[key] = dict(record, version=__version__)
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                tmp = self.path.with_suffix(self.path.suffix + ".tmp")
                tmp.write_text(json.dumps({"format": 1, "records": self._mem}, indent=1, sort_keys=True))
                os.replace(tmp, self.path)


_CACHE = CriticalValueCache(os.environ.get("CVMINDEP_CACHE"))


def set_cache(path: str | Path | None) -> CriticalValueCache:
    global _CACHE
    _CACHE = CriticalValueCache(path)
    return _CACHE


@dataclass
class CriticalValue:
    statistic: str
    d: int
    alpha: float
    method: str
    value: float | dict
    stderr: float | None = None
    reps: int | None = None
    settings: dict = field(default_factory=dict)


def _quantile_se(sample: np.ndarray, p: float) -> float:
    """Order-statistic standard error of the empirical p-quantile."""
    n = sample.size
    s = np.sort(sample)
    half = 1.96 * math.sqrt(p * (1 - p) / n)
    lo = s[max(0, int(math.floor((p - half) * n)))]
    hi = s[min(n - 1, int(math.ceil((p + half) * n)))]
    return float((hi - lo) / (2 * 1.96))


def _mc_fisher(d: int, pairwise: bool, reps: int, seed, head: int | None, truncation: dict) -> np.ndarray:
    """Simulated limit of T (or T2) under the null, through the inverted per-size cdf."""
    rng = np.random.default_rng(seed)
    sizes = [2] if pairwise else list(range(2, d + 1))
    total = np.zeros(reps)
    for k in sizes:
        law = null_law(k, truncation.get(k))
        table = NullSurvivalTable(law)
        for _ in range(math.comb(d, k)):
            draws = law.sample(reps, rng, head=head)
            total += -2.0 * np.log(np.maximum(table(draws), 1e-15))
    return total


class NullSurvivalTable:
    """Fast x -> P(X > x) for repeated evaluation.

    Inversion on a fine grid down to survival ~1e-7, interpolated with a
    monotone cubic in log-survival.  Past that edge the law is split as
    w_1 chi2(df_1, nc_1) + Y, the leading group against everything else, and
    P(X > x) = int f_Y(y) S_1((x - y) / w_1) dy with S_1 from scipy and f_Y
    from one inversion.  Y has a lighter tail than X, so the integrand is
    concentrated at moderate y.  ``exact`` routes points past the edge, up to
    mean + 30 sd, through :meth:`QuadraticForm.tail_survival` instead.
    """

    def __init__(self, law: QuadraticForm, points: int = 1500, edge_sf: float = 1e-7, far_points: int = 4000):
        self.law = law
        hi = law.mean + 25 * law.sd
        xs = np.linspace(0.0, hi, points)
        sv = law.inverter(hi).survival(xs)
        ok = np.nonzero(sv >= edge_sf)[0]
        last = max(int(ok[-1]), 3)
        self.x = xs[: last + 1]
        self.logsf = np.log(np.clip(sv[: last + 1], 1e-300, 1.0))
        self._interp = interpolate.PchipInterpolator(self.x, self.logsf, extrapolate=False)
        self.edge = float(self.x[-1])
        self.exact_limit = law.mean + 30 * law.sd
        self._far_setup(far_points)

    def _far_setup(self, points: int) -> None:
        law = self.law
        self.w1, df1, nc1 = float(law.weights[0]), float(law.df[0]), float(law.nc[0])
        if nc1 > 0:
            self._s1 = lambda z: stats.ncx2.sf(z, df1, nc1)
        else:
            self._s1 = lambda z: stats.chi2.sf(z, df1)
        if law.weights.size > 1:
            rest = QuadraticForm(law.weights[1:], law.df[1:], law.nc[1:], law.tail)
            top = rest.mean + 25 * rest.sd
            self.y = np.linspace(0.0, top, points)
            self.fy = np.clip(rest.density(self.y), 0.0, None)
        else:
            # only the truncation remainder is left; treat it as its mean
            self.y = np.array([law.tail[0]])
            self.fy = None

    def far_survival(self, x) -> np.ndarray:
        """P(X > x) by conditioning on all but the leading group."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.fy is None:
            return self._s1((x - self.y[0]) / self.w1)
        z = (x[:, None] - self.y[None, :]) / self.w1
        vals = self.fy[None, :] * np.where(z > 0, self._s1(np.maximum(z, 0.0)), 1.0)
        return np.trapezoid(vals, self.y, axis=1)

    def __call__(self, x, exact: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.ones_like(x)
        inside = (x > 0) & (x <= self.edge)
        if np.any(inside):
            out[inside] = np.exp(np.minimum(self._interp(x[inside]), 0.0))
        beyond = x > self.edge
        if np.any(beyond):
            out[beyond] = self.far_survival(x[beyond])
            if exact:
                sel = beyond & (x <= self.exact_limit)
                if np.any(sel):
                    out[sel] = self.law.tail_survival(x[sel])
        return out[0] if scalar else out


def critical_value(statistic: str, d: int, alpha: float = 0.05, method: str | None = None, *,
                   reps: int | None = None, seed=0, m: int = 128, n: int | None = None,
                   head: int | None = 256, truncation: dict | None = None, use_cache: bool = True) -> CriticalValue:
    """Critical value of a test statistic at level alpha.

    Statistic ids: B, L, W, T, L2, T2 (scalars); M (dict |A| -> q_|A|(alpha'));
    M2 (dict {2: q_2(alpha'')}); q2, q3, ... (one size at alpha').

    Methods: ``spectral-mc`` (limit laws sampled; DM device for B),
    ``inversion`` (cdf inversion + bisection; L, W, L2, M, M2, q_k),
    ``chi2`` (T, T2), ``finite-sample-mc`` (rank statistics simulated at
    sample size ``n``).
    """
    truncation = dict(truncation or {})
    stat = statistic
    if stat not in STATISTICS and not (stat.startswith("q") and stat[1:].isdigit()):
        raise ValueError(f"unknown statistic id {statistic!r}")
    if method is None:
        method = {"B": "spectral-mc", "L": "spectral-mc", "W": "spectral-mc", "L2": "spectral-mc",
                  "T": "chi2", "T2": "chi2"}.get(stat, "inversion")
    settings = {"truncation": {str(k): v for k, v in sorted(truncation.items())}}
    if method in ("spectral-mc", "finite-sample-mc"):
        reps = reps or (100_000 if stat != "W" else 1_000_000)
        settings.update(reps=reps, seed=seed)
        if stat == "B" and method == "spectral-mc":
            settings["m"] = m
        elif method == "spectral-mc":
            settings["head"] = head
        if method == "finite-sample-mc":
            if n is None:
                raise ValueError("finite-sample-mc needs the sample size n")
            settings["n"] = n
    key = CriticalValueCache.key(stat, d, alpha, method, settings)
    if use_cache:
        rec = _CACHE.get(key)
        if rec is not None:
            value = rec["value"]
            if isinstance(value, dict):
                value = {int(k): v for k, v in value.items()}
            return CriticalValue(stat, d, alpha, method, value, rec.get("stderr"), rec.get("reps"), settings)

    stderr = None
    if method == "chi2":
        if stat not in ("T", "T2"):
            raise ValueError("chi2 method applies to T and T2 only")
        terms = math.comb(d, 2) if stat == "T2" else 2**d - d - 1
        value = float(stats.chi2.ppf(1 - alpha, 2 * terms))
    elif method == "inversion":
        if stat == "B":
            value = global_law(d, truncation.get("global")).quantile(1 - alpha)
        elif stat in ("L", "W", "L2"):
            value = combined_law(stat, d, truncation=truncation).quantile(1 - alpha)
        elif stat == "M":
            ap = alpha_prime(alpha, d)
            value = {k: null_law(k, truncation.get(k)).quantile(1 - ap) for k in range(2, d + 1)}
        elif stat == "M2":
            value = {2: null_law(2, truncation.get(2)).quantile(1 - alpha_double_prime(alpha, d))}
        elif stat.startswith("q"):
            k = int(stat[1:])
            if not 2 <= k <= d:
                raise ValueError(f"q{k} needs 2 <= k <= d")
            value = null_law(k, truncation.get(k)).quantile(1 - alpha_prime(alpha, d))
        else:
            raise ValueError(f"inversion does not apply to {stat}")
    elif method == "spectral-mc":
        if stat == "B":
            sample = dm_sample_B(m, 0.0, None, d, seed, reps)
        elif stat in ("L", "W", "L2"):
            sample = combined_law(stat, d, truncation=truncation).sample(reps, seed, head=head)
        elif stat in ("T", "T2"):
            sample = _mc_fisher(d, stat == "T2", reps, seed, head, truncation)
        else:
            raise ValueError(f"spectral-mc does not apply to {stat}; use inversion")
        value = float(np.quantile(sample, 1 - alpha))
        stderr = _quantile_se(sample, 1 - alpha)
    elif method == "finite-sample-mc":
        from .statistics import null_statistics_sample

        sample = null_statistics_sample(stat, n, d, alpha, reps, seed)
        if isinstance(sample, dict):
            value = {k: float(np.quantile(v, 1 - q)) for k, (v, q) in sample.items()}
        else:
            value = float(np.quantile(sample, 1 - alpha))
            stderr = _quantile_se(sample, 1 - alpha)
    else:
        raise ValueError(f"unknown method {method!r}")

    if use_cache:
        _CACHE.put(key, {"value": value, "stderr": stderr, "reps": reps, "statistic": stat, "d": d,
                         "alpha": alpha, "method": method, "settings": settings})
    return CriticalValue(stat, d, alpha, method, value, stderr, reps, settings)
