"""Copula families near independence.

For each family C_theta with independence at theta0 this module evaluates

* the derivative ``Cdot(u) = dC_theta(u)/dtheta`` at theta0,
* the Moebius drifts ``mu_A = M_A(Cdot)`` of the subset processes,
* their Fourier coefficients ``I_{gamma,A}`` in the product sine basis,
* the squared norms ``I_A = int mu_A^2``,

plus samplers for Monte Carlo checks.  Points ``u`` are arrays whose last
axis holds the d coordinates; every evaluator broadcasts over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy import integrate, special, stats

from .ranks import Dataset, SubsetMask


class UnsupportedFamilyError(ValueError):
    pass


@dataclass(frozen=True)
class CopulaFamily:
    """Descriptor of a one-parameter family.

    ``drift_scale`` relates the family's drift to the representative of its
    class: AMH carries twice Frank's drift and Gumbel-Barnett the negative of
    Clayton's.
    """

    name: str
    theta0: float
    theta_range: tuple[float, float]
    archimedean: bool
    product_drift: bool
    representative: str
    drift_scale: float = 1.0

    def check_theta(self, theta: float) -> None:
        lo, hi = self.theta_range
        if not lo <= theta <= hi:
            raise ValueError(f"{self.name}: theta={theta} outside [{lo}, {hi}]")


FAMILIES = {
    "gaussian": CopulaFamily("gaussian", 0.0, (-1.0, 1.0), False, True, "gaussian"),
    "fgm": CopulaFamily("fgm", 0.0, (-1.0, 1.0), False, True, "fgm"),
    "frank": CopulaFamily("frank", 0.0, (-math.inf, math.inf), True, True, "frank"),
    "amh": CopulaFamily("amh", 0.0, (0.0, 1.0), True, True, "frank", 2.0),
    "clayton": CopulaFamily("clayton", 0.0, (0.0, math.inf), True, True, "clayton"),
    "gumbel_barnett": CopulaFamily("gumbel_barnett", 0.0, (0.0, 1.0), True, True, "clayton", -1.0),
    "gumbel_hougaard": CopulaFamily("gumbel_hougaard", 0.0, (0.0, 1.0), True, False, "gumbel_hougaard"),
}

_ALIASES = {
    "normal": "gaussian",
    "gauss": "gaussian",
    "farlie-gumbel-morgenstern": "fgm",
    "ali-mikhail-haq": "amh",
    "gumbel-barnett": "gumbel_barnett",
    "gumbelbarnett": "gumbel_barnett",
    "gb": "gumbel_barnett",
    "gumbel-hougaard": "gumbel_hougaard",
    "gumbelhougaard": "gumbel_hougaard",
    "gumbel": "gumbel_hougaard",
}


def get_family(family: str | CopulaFamily) -> CopulaFamily:
    if isinstance(family, CopulaFamily):
        return family
    key = family.strip().lower()
    key = _ALIASES.get(key, key)
    try:
        return FAMILIES[key]
    except KeyError:
        raise UnsupportedFamilyError(f"unknown copula family {family!r}; choose from {sorted(FAMILIES)}") from None


def _interior(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[-1] < 2:
        raise ValueError("points need at least two coordinates")
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValueError("drift evaluation requires points strictly inside the unit cube")
    return u


def _normal_score_density(u: np.ndarray) -> np.ndarray:
    """phi(Phi^{-1}(u))."""
    return stats.norm.pdf(stats.norm.ppf(u))


def _pair_sum(r: np.ndarray) -> np.ndarray:
    """sum_{j<k} r_j r_k along the last axis."""
    s = np.sum(r, axis=-1)
    return 0.5 * (s * s - np.sum(r * r, axis=-1))


# ---------------------------------------------------------------------------
# generator derivatives at theta0


def _gh_phidot(t):
    t = np.asarray(t, dtype=float)
    s = -np.log(np.where(t < 1, t, 0.5))
    out = s * np.log(s)
    return np.where(t < 1, out, 0.0)


GENERATOR_DERIVATIVES = {
    "frank": lambda t: (np.asarray(t) - 1.0) / 2.0,
    "amh": lambda t: np.asarray(t) - 1.0 - np.log(t),
    "clayton": lambda t: np.log(t) ** 2 / 2.0,
    "gumbel_barnett": lambda t: -np.log(t) ** 2 / 2.0,
    "gumbel_hougaard": _gh_phidot,
}


def generator_derivative(family):
    fam = get_family(family)
    if not fam.archimedean:
        raise UnsupportedFamilyError(f"{fam.name} is not Archimedean")
    return GENERATOR_DERIVATIVES[fam.name]


# ---------------------------------------------------------------------------
# drifts


def _cdot(name: str, u: np.ndarray) -> np.ndarray:
    # valid on (0, 1]^d; coordinates equal to 1 are needed by the Moebius operator
    d = u.shape[-1]
    prod = np.prod(u, axis=-1)
    if name == "gaussian":
        return prod * _pair_sum(_normal_score_density(u) / u)
    if name == "fgm":
        return np.prod(u * (1 - u), axis=-1)
    if name in ("frank", "amh"):
        c = 0.5 if name == "frank" else 1.0
        return c * prod * (d - 1 + prod - np.sum(u, axis=-1))
    if name in ("clayton", "gumbel_barnett"):
        sign = 1.0 if name == "clayton" else -1.0
        return sign * prod * _pair_sum(np.log(u))
    if name == "gumbel_hougaard":
        logs = np.log(u)
        total = np.sum(logs, axis=-1, keepdims=True)
        inner = np.where(logs < 0, total / np.where(logs < 0, logs, -1.0), 1.0)
        return prod * -np.sum(logs * np.log(inner), axis=-1)
    raise UnsupportedFamilyError(name)


def drift_cdot(family, u) -> np.ndarray:
    """dC_theta(u)/dtheta at independence, closed form per family."""
    fam = get_family(family)
    return _cdot(fam.name, _interior(u))


def drift_cdot_closed(family, u) -> np.ndarray:
    """As :func:`drift_cdot` but also accepting coordinates equal to 1."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u > 1):
        raise ValueError("points must lie in (0, 1]^d")
    return _cdot(get_family(family).name, u)


def archimedean_cdot(phidot, u) -> np.ndarray:
    """Cdot from a generator derivative: C {phidot(C) - sum_j phidot(u_j)}."""
    u = _interior(u)
    c = np.prod(u, axis=-1)
    return c * (phidot(c) - np.sum(phidot(u), axis=-1))


def _restrict(u: np.ndarray, keep) -> np.ndarray:
    """u^B: coordinates outside B set to 1."""
    out = np.ones_like(u)
    keep = list(keep)
    out[..., keep] = u[..., keep]
    return out


def _subsets_of(idx):
    for k in range(len(idx) + 1):
        yield from combinations(idx, k)


def mobius_transform(f, A: SubsetMask, u) -> np.ndarray:
    """M_A(f)(u) = sum_{B subset A} (-1)^{|A \\ B|} f(u^B) prod_{j in A \\ B} u_j."""
    u = np.asarray(u, dtype=float)
    idx = A.indices
    total = np.zeros(u.shape[:-1])
    for B in _subsets_of(idx):
        rest = [j for j in idx if j not in B]
        sign = -1.0 if len(rest) % 2 else 1.0
        if B:
            val = f(_restrict(u, B))
        else:
            val = f(np.ones_like(u))
        total = total + sign * val * np.prod(u[..., rest], axis=-1)
    return total


def archimedean_mu(phidot, A: SubsetMask, u) -> np.ndarray:
    """mu_A(u) = C(u^A) sum_{B subset A} (-1)^{|A \\ B|} phidot{C(u^B)}."""
    u = _interior(u)
    A.check(u.shape[-1])
    idx = A.indices
    total = np.zeros(u.shape[:-1])
    for B in _subsets_of(idx):
        sign = -1.0 if (len(idx) - len(B)) % 2 else 1.0
        cb = np.prod(u[..., list(B)], axis=-1) if B else np.ones(u.shape[:-1])
        total = total + sign * phidot(cb)
    return np.prod(u[..., list(idx)], axis=-1) * total


def drift_mu(family, A: SubsetMask, u) -> np.ndarray:
    """Drift of the limiting subset process G_A under contiguous alternatives."""
    fam = get_family(family)
    u = _interior(u)
    d = u.shape[-1]
    A.check(d)
    idx = list(A.indices)
    ua = u[..., idx]
    k = len(idx)
    zero = np.zeros(u.shape[:-1])
    name = fam.name
    if name == "gaussian":
        return np.prod(_normal_score_density(ua), axis=-1) if k == 2 else zero
    if name == "fgm":
        # Cdot(u^B) vanishes unless B is everything, so only A = S_d survives
        return np.prod(ua * (1 - ua), axis=-1) if k == d else zero
    if name in ("frank", "amh"):
        c = 0.5 if name == "frank" else 1.0
        return c * np.prod(ua * (ua - 1), axis=-1)
    if name in ("clayton", "gumbel_barnett"):
        if k != 2:
            return zero
        sign = 1.0 if name == "clayton" else -1.0
        return sign * np.prod(ua * np.log(ua), axis=-1)
    if name == "gumbel_hougaard":
        logs = np.log(ua)
        total = zero.copy()
        for B in _subsets_of(range(k)):
            if not B:
                continue
            sign = -1.0 if (k - len(B)) % 2 else 1.0
            sb = np.sum(logs[..., list(B)], axis=-1)
            total = total + sign * sb * np.log(-sb)
        return -np.prod(ua, axis=-1) * total
    raise UnsupportedFamilyError(name)


# ---------------------------------------------------------------------------
# Fourier coefficients


def sine_integral(x, tol: float = 1e-16):
    """Si(x) = int_0^x sin(t)/t dt.

    Alternating power series for |x| <= 8, stopped when the term ratio falls
    below ``tol``; ``scipy.special.sici`` beyond, where the series starts to
    lose digits to cancellation.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) <= 8.0
    if np.any(small):
        xs = x[small]
        term = xs.copy()  # x^(2m+1)/(2m+1)! with m = 0
        acc = xs.copy()
        m = 0
        while True:
            m += 1
            term = -term * xs * xs / ((2 * m) * (2 * m + 1))
            contrib = term / (2 * m + 1)
            acc = acc + contrib
            if np.all(np.abs(contrib) <= tol * np.maximum(np.abs(acc), 1e-300)):
                break
        out[small] = acc
    if np.any(~small):
        out[~small] = special.sici(x[~small])[0]
    return out if out.ndim else float(out)


_GL_Z, _GL_W = np.polynomial.legendre.leggauss(600)


@lru_cache(maxsize=None)
def gaussian_g(k: int, rule: str = "legendre") -> float:
    """g(k) = int_0^1 phi{Phi^{-1}(u)} sin(k pi u) du.

    ``legendre``: substitute u = Phi(z) and integrate phi(z)^2 sin(k pi Phi(z))
    over [-8, 8] with a fixed 600-point Gauss-Legendre rule.
    ``qawo``: QUADPACK's sine-weighted rule directly in u.
    """
    if rule == "legendre":
        z = 8.0 * _GL_Z
        vals = stats.norm.pdf(z) ** 2 * np.sin(k * np.pi * stats.norm.cdf(z))
        return float(8.0 * np.dot(_GL_W, vals))
    if rule == "qawo":
        val, _ = integrate.quad(_normal_score_density, 0.0, 1.0, weight="sin", wvar=k * np.pi,
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        return float(val)
    raise ValueError(f"unknown quadrature rule {rule!r}")


def _gaussian_g_array(gam: np.ndarray) -> np.ndarray:
    top = int(gam.max())
    table = np.array([0.0] + [gaussian_g(k) for k in range(1, top + 1)])
    return table[gam]


def eigenvalues(gammas) -> np.ndarray:
    """lambda_gamma = prod_j (pi gamma_j)^{-2} for an (m, k) array of multi-indices."""
    g = np.atleast_2d(np.asarray(gammas, dtype=float))
    return np.prod((np.pi * g) ** -2.0, axis=-1)


def fourier_coeffs(family, k: int, d: int, gammas) -> np.ndarray:
    """I_{gamma,A} for a subset of size k in dimension d, one per row of ``gammas``.

    Every in-scope drift is symmetric in the coordinates of A, so the value
    depends on A only through |A| (and, for FGM, on whether A = S_d).
    """
    fam = get_family(family)
    gam = np.atleast_2d(np.asarray(gammas, dtype=np.int64))
    if gam.shape[-1] != k:
        raise ValueError(f"multi-indices must have {k} entries")
    if np.any(gam < 1):
        raise ValueError("multi-index entries must be >= 1")
    if not 2 <= k <= d:
        raise ValueError("need 2 <= |A| <= d")
    lam = eigenvalues(gam)
    all_odd = np.all(gam % 2 == 1, axis=-1)
    zeros = np.zeros(gam.shape[0])
    name = fam.name
    if name == "gaussian":
        if k != 2:
            return zeros
        return 2 * np.pi**2 * np.prod(gam * _gaussian_g_array(gam), axis=-1)
    if name == "fgm":
        if k != d:
            return zeros
        return np.where(all_odd, 2.0 ** (2.5 * d) * lam, 0.0)
    if name in ("frank", "amh"):
        c = 1.0 if name == "frank" else 2.0
        return np.where(all_odd, c * (-1.0) ** k * 2.0 ** (2.5 * k - 1) * lam, 0.0)
    if name in ("clayton", "gumbel_barnett"):
        if k != 2:
            return zeros
        sign = 1.0 if name == "clayton" else -1.0
        si = sine_integral(np.pi * gam.astype(float))
        return sign * 2 * np.pi**-2 * np.prod(si / gam, axis=-1)
    raise UnsupportedFamilyError(f"{name}: Fourier coefficients need a product-form drift")


def fourier_coeff(family, A: SubsetMask, gamma, d: int) -> float:
    A.check(d)
    return float(fourier_coeffs(family, A.cardinality, d, [gamma])[0])


def fourier_coeff_numeric(family, A: SubsetMask, gamma, d: int) -> float:
    """I_{gamma,A} by direct quadrature of mu_A against the sine basis.

    Uses the product form mu_A = prod_j m(u_j) (scale absorbed in the first
    factor), so only one-dimensional integrals are needed.  Slow; meant as an
    oracle for :func:`fourier_coeffs`.
    """
    fam = get_family(family)
    if not fam.product_drift:
        raise UnsupportedFamilyError(fam.name)
    A.check(d)
    k = A.cardinality
    gamma = tuple(int(g) for g in gamma)
    probe = np.full(d, 0.5)
    idx = list(A.indices)

    def marginal(j, x):
        # mu_A along coordinate j with the other A-coordinates fixed at 1/2;
        # every drift vanishes on the boundary
        if x[0] <= 0.0 or x[0] >= 1.0:
            return np.zeros(1)
        pt = np.tile(probe, (np.size(x), 1))
        pt[:, idx[j]] = x
        return drift_mu(fam, A, pt)

    base = float(drift_mu(fam, A, probe[None, :])[0])
    if base == 0.0:
        return 0.0
    total = 1.0
    for j in range(k):
        val, _ = integrate.quad(lambda x: float(marginal(j, np.array([x]))[0]), 0.0, 1.0,
                                weight="sin", wvar=gamma[j] * np.pi, epsabs=1e-14, limit=200)
        total *= val
    # prod_j int mu(...) = base^{k-1} * int mu_A f_gamma for product-form drifts
    integral = total / base ** (k - 1)
    lam = float(eigenvalues([gamma])[0])
    return 2 ** (k / 2) * integral / math.sqrt(lam)


def drift_norm(family, k: int, d: int) -> float:
    """I_A = int mu_A(u)^2 du for |A| = k."""
    fam = get_family(family)
    if not 2 <= k <= d:
        raise ValueError("need 2 <= |A| <= d")
    name = fam.name
    if name == "gaussian":
        return (1 / (2 * np.pi * np.sqrt(3))) ** 2 if k == 2 else 0.0
    if name == "fgm":
        return (1 / 30) ** d if k == d else 0.0
    if name in ("frank", "amh"):
        c = 0.5 if name == "frank" else 1.0
        return c * c * (1 / 30) ** k
    if name in ("clayton", "gumbel_barnett"):
        return (2 / 27) ** 2 if k == 2 else 0.0
    if k > 3:
        raise UnsupportedFamilyError(f"{name}: drift norm quadrature limited to |A| <= 3")
    A = SubsetMask.from_bits((1 << k) - 1)

    def integrand(*x):
        return float(drift_mu(fam, A, np.array([x]))[0]) ** 2

    val, _ = integrate.nquad(integrand, [(0, 1)] * k, opts={"epsabs": 1e-12, "epsrel": 1e-8, "limit": 100})
    return float(val)


# ---------------------------------------------------------------------------
# samplers


def _sample_uniforms(fam: CopulaFamily, theta: float, n: int, d: int, rng) -> np.ndarray:
    if fam.name == "gaussian":
        if not -1.0 / (d - 1) < theta < 1.0:
            raise ValueError(f"gaussian: correlation must lie in (-1/(d-1), 1) = ({-1 / (d - 1):.4g}, 1)")
        corr = np.full((d, d), theta)
        np.fill_diagonal(corr, 1.0)
        z = rng.standard_normal((n, d)) @ np.linalg.cholesky(corr).T
        return stats.norm.cdf(z)
    if fam.name == "fgm":
        if abs(theta) > 1:
            raise ValueError("fgm: requires |theta| <= 1")
        out = np.empty((0, d))
        bound = 1 + abs(theta)
        while out.shape[0] < n:
            m = max(2 * (n - out.shape[0]), 64)
            u = rng.random((m, d))
            dens = 1 + theta * np.prod(1 - 2 * u, axis=1)
            keep = rng.random(m) * bound <= dens
            out = np.vstack([out, u[keep]])
        return out[:n]
    if fam.name == "clayton":
        if theta < 0:
            raise ValueError("clayton: requires theta >= 0")
        e = rng.exponential(size=(n, d))
        if theta == 0:
            return np.exp(-e)
        v = rng.gamma(1.0 / theta, size=(n, 1))
        return (1 + e / v) ** (-1.0 / theta)
    if fam.name == "frank":
        if theta <= 0:
            raise ValueError("frank: sampler requires theta > 0")
        p = -np.expm1(-theta)
        v = rng.logseries(p, size=(n, 1)).astype(float)
        e = rng.exponential(size=(n, d))
        # Laplace transform of the logarithmic law: -log(1 - p e^{-s}) / theta
        return -np.log1p(-p * np.exp(-e / v)) / theta
    raise UnsupportedFamilyError(f"no sampler for {fam.name}; supported: gaussian, fgm, clayton, frank")


def sample(family, theta: float, n: int, d: int, seed=None) -> Dataset:
    """n i.i.d. draws from the d-variate copula C_theta (uniform margins)."""
    fam = get_family(family)
    if n < 2 or d < 2:
        raise ValueError("need n >= 2 and d >= 2")
    rng = np.random.default_rng(seed)
    u = _sample_uniforms(fam, float(theta), int(n), int(d), rng)
    return Dataset(u, tuple(f"u{j + 1}" for j in range(d)))
