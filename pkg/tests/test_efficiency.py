import numpy as np
import pytest
from numpy.testing import assert_allclose

from cvmindep.efficiency import (
    are_table,
    curvature,
    fd_curvature,
    mixture_derivative_check,
    shifted_density,
    tail_rate_check,
)
from cvmindep.power import beta_L, beta_M, beta_W
from cvmindep.spectral import QuadraticForm, null_law

TOY_WEIGHTS = [1.0, 0.6, 0.35, 0.2, 0.12, 0.08, 0.05, 0.03, 0.02, 0.01]
TOY_MU = [0.8, -0.5, 1.1, 0.3, -0.9, 0.4, 0.7, -0.2, 0.6, 1.0]


class TestShiftedDensity:
    def test_normalized_and_positive(self):
        base = null_law(2)
        w = 1 / np.pi**4
        x = np.linspace(1e-4, base.mean + 30 * base.sd, 3000)
        h = shifted_density(base, w, x)
        assert np.all(h >= -1e-6 * h.max())
        assert_allclose(np.trapezoid(h, x), 1.0, atol=1e-3)

    def test_exponential_without_base(self):
        w = 0.7
        x = np.array([0.1, 0.5, 1.3, 4.0])
        assert_allclose(shifted_density(None, w, x), np.exp(-x / (2 * w)) / (2 * w), rtol=1e-6)

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(ValueError):
            shifted_density(None, 0.0, 1.0)


class TestCurvature:
    @pytest.mark.parametrize("stat,fn", [("L", beta_L), ("W", beta_W), ("M", beta_M)])
    def test_matches_finite_difference(self, stat, fn):
        analytic = curvature(stat, "frank", 3)
        fd = fd_curvature(lambda dl: fn("frank", 3, dl), 0.05)
        assert_allclose(analytic, fd, rtol=0.02)

    def test_nonnegative(self):
        for fam in ("gaussian", "fgm", "frank", "clayton"):
            for stat in ("L", "L2", "M", "M2", "W"):
                assert curvature(stat, fam, 3) >= 0

    def test_fgm_pairwise_blind(self):
        assert curvature("L2", "fgm", 3) == 0.0
        assert curvature("M2", "fgm", 3) == 0.0

    def test_drift_scale(self):
        # AMH drift = 2 x Frank drift: curvatures scale by 4, percentages do not move
        for stat in ("L", "M", "W"):
            assert_allclose(curvature(stat, "amh", 3), 4 * curvature(stat, "frank", 3), rtol=1e-8)
        a, f = are_table(["amh", "frank"])
        assert a.best == f.best
        for s in a.percent:
            assert_allclose(a.percent[s], f.percent[s], rtol=1e-8)

    def test_subset_needs_cardinality(self):
        with pytest.raises(ValueError):
            curvature("subset", "frank", 3)
        assert curvature("subset", "frank", 3, k=2) > 0

    def test_unknown_statistic(self):
        with pytest.raises(ValueError):
            curvature("T", "frank", 3)


class TestAreTable:
    def test_shape(self):
        rows = are_table(["fgm", "clayton"])
        assert [r.family for r in rows] == ["fgm", "clayton"]
        for r in rows:
            assert_allclose(r.percent[r.best], 100.0, rtol=1e-14)
            assert set(r.percent) == {"L", "L2", "M", "M2", "W"}
        fgm = rows[0]
        assert fgm.percent["L2"] == 0.0 and fgm.percent["M2"] == 0.0


class TestAppendixChecks:
    def test_mixture_derivative_identity(self):
        fd, formula = mixture_derivative_check(TOY_WEIGHTS, TOY_MU, x=6.0)
        assert_allclose(fd, formula, rtol=1e-3)

    def test_single_weight_tail(self):
        law = QuadraticForm([1.0], [2.0], [0.0])
        r = tail_rate_check(law, np.linspace(40, 200, 9))
        assert_allclose(r.slope, -0.5, rtol=1e-3)

    def test_small_weights_do_not_move_the_rate(self):
        law = QuadraticForm([1.0, 0.1, 0.05, 0.02], [1.0] * 4, [0.0] * 4)
        r = tail_rate_check(law, np.linspace(40, 200, 9))
        assert 0.9 <= r.ratio <= 1.1
