import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special, stats

from cvmindep.copulas import (
    UnsupportedFamilyError,
    archimedean_cdot,
    archimedean_mu,
    drift_cdot,
    drift_mu,
    drift_norm,
    fourier_coeff,
    fourier_coeff_numeric,
    gaussian_g,
    get_family,
    mobius_transform,
    sample,
    sine_integral,
)
from cvmindep.ranks import SubsetMask, all_subsets

A12 = SubsetMask.from_members([1, 2])
A123 = SubsetMask.from_members([1, 2, 3])


def frank_phidot(t):
    return (t - 1) / 2


def clayton_phidot(t):
    return np.log(t) ** 2 / 2


class TestFamilies:
    def test_aliases(self):
        assert get_family("Gumbel-Barnett").name == "gumbel_barnett"
        assert get_family("normal").name == "gaussian"

    def test_unknown(self):
        with pytest.raises(UnsupportedFamilyError):
            get_family("student")


class TestDrift:
    def test_fgm_center(self):
        assert_allclose(drift_cdot("fgm", [0.5, 0.5]), 0.0625)

    def test_frank_center(self):
        assert_allclose(drift_cdot("frank", [0.5, 0.5]), 0.03125)

    def test_clayton_point(self):
        e = math.exp(-1)
        assert_allclose(drift_cdot("clayton", [e, e]), math.exp(-2), rtol=1e-14)
        assert_allclose(drift_mu("clayton", A12, [e, e]), math.exp(-2), rtol=1e-14)

    def test_gaussian_triple_zero(self, rng):
        u = rng.uniform(0.05, 0.95, size=(20, 3))
        assert np.all(drift_mu("gaussian", A123, u) == 0)

    def test_fgm_pairs_zero(self, rng):
        u = rng.uniform(0.05, 0.95, size=(20, 3))
        assert np.all(drift_mu("fgm", A12, u) == 0)

    def test_archimedean_frank(self, rng):
        u = rng.uniform(0.01, 0.99, size=(50, 3))
        for A in all_subsets(3):
            ua = u[:, list(A.indices)]
            assert_allclose(archimedean_mu(frank_phidot, A, u), 0.5 * np.prod(ua * (ua - 1), axis=1),
                            rtol=1e-12, atol=1e-15)

    def test_archimedean_clayton_triple(self, rng):
        u = rng.uniform(0.01, 0.99, size=(50, 3))
        assert_allclose(archimedean_mu(clayton_phidot, A123, u), 0.0, atol=1e-13)

    def test_constant_generator_annihilated(self, rng):
        u = rng.uniform(0.01, 0.99, size=(10, 4))
        for A in all_subsets(4):
            assert_allclose(archimedean_mu(lambda t: np.full_like(t, 3.0), A, u), 0.0, atol=1e-14)

    @pytest.mark.parametrize("family,phidot", [("frank", frank_phidot), ("clayton", clayton_phidot)])
    def test_generator_rule_matches_closed_form(self, rng, family, phidot):
        u = rng.uniform(0.02, 0.98, size=(30, 3))
        assert_allclose(archimedean_cdot(phidot, u), drift_cdot(family, u), rtol=1e-12)

    @pytest.mark.parametrize("family", ["gaussian", "fgm", "frank", "clayton", "gumbel_hougaard"])
    def test_mobius_of_cdot(self, rng, family):
        # mu_A is the Moebius transform of Cdot, which vanishes when an argument equals 1
        from cvmindep.copulas import drift_cdot_closed

        u = rng.uniform(0.05, 0.95, size=(15, 3))
        for A in all_subsets(3):
            got = mobius_transform(lambda v: drift_cdot_closed(family, v), A, u)
            assert_allclose(got, drift_mu(family, A, u), rtol=1e-9, atol=1e-13)

    def test_boundary_vanishing(self):
        u = np.array([[1e-12, 0.4, 0.7], [0.3, 1 - 1e-12, 0.2]])
        for fam in ("gaussian", "frank", "clayton", "fgm"):
            assert np.all(np.abs(drift_mu(fam, A123 if fam == "fgm" else A12, u)) < 1e-9)

    def test_interior_required(self):
        with pytest.raises(ValueError):
            drift_cdot("frank", [0.0, 0.5])


class TestFourier:
    def test_sine_integral(self):
        x = np.array([0.1, 1.0, np.pi, 7.9, 8.1, 15.9, 40.0])
        assert_allclose(sine_integral(x), special.sici(x)[0], rtol=1e-14)
        assert_allclose(sine_integral(np.pi), 1.8519370519824662, rtol=1e-15)

    def test_frank_even_index(self):
        assert fourier_coeff("frank", A12, (1, 2), 3) == 0.0

    def test_frank_11(self):
        assert_allclose(fourier_coeff("frank", A12, (1, 1), 3), 16 / np.pi**4, rtol=1e-14)

    def test_clayton_11(self):
        expected = 2 / np.pi**2 * special.sici(np.pi)[0] ** 2
        assert_allclose(fourier_coeff("clayton", A12, (1, 1), 3), expected, rtol=1e-14)
        assert_allclose(expected, 0.6949966, rtol=1e-7)

    def test_gaussian_g_rules_agree(self):
        for k in (1, 2, 5, 17):
            assert_allclose(gaussian_g(k), gaussian_g(k, "qawo"), atol=1e-12)

    @pytest.mark.parametrize("family,A,gamma", [
        ("frank", A12, (1, 3)),
        ("clayton", A12, (2, 1)),
        ("gaussian", A12, (1, 2)),
        ("fgm", A123, (1, 1, 3)),
        ("amh", A12, (3, 3)),
    ])
    def test_closed_form_vs_quadrature(self, family, A, gamma):
        assert_allclose(fourier_coeff(family, A, gamma, 3), fourier_coeff_numeric(family, A, gamma, 3),
                        rtol=1e-7, atol=1e-12)

    def test_drift_norms(self):
        assert_allclose(drift_norm("frank", 2, 3), 1 / 3600, rtol=1e-15)
        assert drift_norm("gaussian", 3, 3) == 0.0
        assert drift_norm("fgm", 2, 3) == 0.0


class TestSampler:
    def test_independent_gaussian(self):
        u = sample("gaussian", 0.0, 2000, 3, seed=3).values
        se = math.sqrt(2 * (2 * 2000 + 5) / (9 * 2000 * 1999))
        for i, j in ((0, 1), (0, 2), (1, 2)):
            assert abs(stats.kendalltau(u[:, i], u[:, j])[0]) < 3 * se

    def test_clayton_tau(self):
        u = sample("clayton", 2.0, 4000, 2, seed=5).values
        assert_allclose(stats.kendalltau(u[:, 0], u[:, 1])[0], 0.5, atol=0.02)

    def test_fgm_spearman(self):
        u = sample("fgm", 1.0, 20000, 2, seed=9).values
        assert_allclose(stats.spearmanr(u[:, 0], u[:, 1])[0], 1 / 3, atol=0.02)

    def test_frank_tau(self):
        theta = 5.0
        u = sample("frank", theta, 4000, 2, seed=2).values
        t = np.linspace(1e-9, theta, 4001)
        debye = np.trapezoid(t / np.expm1(t), t) / theta
        assert_allclose(stats.kendalltau(u[:, 0], u[:, 1])[0], 1 - 4 / theta * (1 - debye), atol=0.02)

    def test_margins_uniform(self):
        u = sample("clayton", 1.5, 3000, 3, seed=1).values
        for j in range(3):
            assert stats.kstest(u[:, j], "uniform").pvalue > 1e-3

    def test_deterministic(self):
        a = sample("frank", 2.0, 50, 3, seed=4).values
        b = sample("frank", 2.0, 50, 3, seed=4).values
        assert np.array_equal(a, b)

    def test_unsupported(self):
        with pytest.raises(UnsupportedFamilyError):
            sample("gumbel_hougaard", 0.5, 10, 2)
