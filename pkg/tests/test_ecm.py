import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptis.ecm import (MAX_ENUM, EcmSample, GaussianFamily, PoissonFamily, ThreePointFamily,
                         ThreePointProblem, ce_closed_form, draw_ecm, ecm_log_likelihood,
                         three_point_enumerate, three_point_eval)
from adaptis.exceptions import DomainError, MeanRangeError, NoMinimizerError


class TestLogLikelihood:
    def test_origin(self):
        assert ecm_log_likelihood(GaussianFamily(2), [0, 0], [1.5, -2.0]) == 0.0
        assert ecm_log_likelihood(ThreePointFamily(), [0.0], [1.0]) == 0.0

    def test_gaussian_form(self):
        b, x = np.array([0.3, -1.2]), np.array([0.5, 2.0])
        assert ecm_log_likelihood(GaussianFamily(2), b, x) == pytest.approx(-b @ x + 0.5 * b @ b)

    def test_three_point_cumulant(self):
        fam = ThreePointFamily()
        for b in (-2.0, 0.0, 0.7):
            assert fam.psi(b) == pytest.approx(math.log((math.exp(b) + math.exp(-b) + 1) / 3))

    def test_three_point_large_parameter(self):
        """The cumulant stays finite where the naive sum of exponentials overflows."""
        fam = ThreePointFamily()
        assert fam.psi(800.0) == pytest.approx(800.0 - math.log(3.0))
        np.testing.assert_allclose(np.exp(fam.log_probs(800.0)), [0, 0, 1], atol=1e-300)

    def test_outside_natural_domain(self):
        with pytest.raises(DomainError):
            ecm_log_likelihood(PoissonFamily(1.0), [1000.0], [2.0])


class TestMeanMap:
    @pytest.mark.parametrize("fam,grid", [
        (GaussianFamily(1), np.linspace(-5, 5, 100)),
        (ThreePointFamily(), np.linspace(-8, 8, 100)),
        (PoissonFamily(2.5), np.linspace(-5, 5, 100)),
    ])
    def test_inverse_round_trip(self, fam, grid):
        back = [fam.mu_inv(fam.mu(b))[0] for b in grid]
        np.testing.assert_allclose(back, grid, atol=1e-10)

    def test_three_point_mean_matches_probabilities(self):
        fam = ThreePointFamily()
        for b in (-1.3, 0.0, 0.4):
            p = np.exp(fam.log_probs(b))
            assert fam.mu(b)[0] == pytest.approx(p @ fam.support)
            assert fam.hess_psi(b)[0, 0] == pytest.approx(p @ fam.support**2 - (p @ fam.support) ** 2)

    def test_out_of_range(self):
        with pytest.raises(MeanRangeError):
            ThreePointFamily().mu_inv([1.0])
        with pytest.raises(MeanRangeError):
            PoissonFamily().mu_inv([-0.1])


class TestCrossEntropyClosedForm:
    def test_constant_payoff_gives_mean(self, rng):
        x = rng.standard_normal((50, 2))
        s = EcmSample(GaussianFamily(2), [0, 0], x, np.ones(50))
        np.testing.assert_allclose(ce_closed_form(s), x.mean(axis=0), rtol=1e-14)

    def test_exponential_payoff_population(self):
        """Z = exp(cX) tilts the normal to mean c; check within 3 SE at n = 10^6."""
        c = 0.6
        fam = GaussianFamily(1)
        s = draw_ecm(fam, lambda x: np.exp(c * x[:, 0]), [0.0], 10**6, np.random.default_rng(2))
        b = ce_closed_form(s)[0]
        w = s.z * np.exp(s.log_lp)
        se = math.sqrt(np.sum(w**2 * (s.x[:, 0] - b) ** 2)) / w.sum()
        assert abs(b - c) < 3 * se

    def test_three_point_symmetric_optimum(self):
        prob = ThreePointProblem(1.0)
        x = ThreePointFamily.support.reshape(3, 1)
        s = EcmSample(ThreePointFamily(), [0.0], x, prob.payoff(x))
        assert ce_closed_form(s)[0] == pytest.approx(0.0, abs=1e-15)

    def test_errors(self):
        x = np.array([[1.0], [1.0]])
        with pytest.raises(NoMinimizerError):
            ce_closed_form(EcmSample(ThreePointFamily(), [0.0], x, np.zeros(2)))
        with pytest.raises(MeanRangeError):
            ce_closed_form(EcmSample(ThreePointFamily(), [0.0], x, np.ones(2)))


class TestThreePointClosedForms:
    def test_d_one_constants(self):
        v = three_point_eval(ThreePointProblem(1.0), 0.0)
        assert (v.f_ce, v.f_msq, v.f_msq2, v.f_ic, v.g) == (6.0, 3.0, 0.0, 0.0, 6.0)
        assert v.f_ce / v.f_msq == 2.0

    def test_d_zero_origin(self):
        v = three_point_eval(ThreePointProblem(0.0), 0.0)
        assert v.var == pytest.approx(2 / 9, rel=1e-15)
        assert v.msq == pytest.approx(1 / 3, rel=1e-15)

    def test_frozen_mean_square(self):
        """msq(0.5) at d = 2, frozen from a 40-digit evaluation."""
        v = three_point_eval(ThreePointProblem(2.0), 0.5)
        assert v.msq == pytest.approx(3.624544970065084, rel=1e-14)

    def test_variance_at_origin_formula(self):
        for d in (-1.0, 0.3, 2.0):
            assert three_point_eval(ThreePointProblem(d), 0.0).var == pytest.approx(2 / 9 * (1 - d) ** 2)

    def test_undefined_at_minus_half(self):
        with pytest.raises(ValueError):
            three_point_eval(ThreePointProblem(-0.5), 0.0)

    def test_ratio_minimized_at_one(self):
        ds = np.concatenate([np.linspace(0.05, 5, 400), np.linspace(-5, -0.55, 300)])
        ratio = [three_point_eval(ThreePointProblem(d), 0.0).f_ce
                 / three_point_eval(ThreePointProblem(d), 0.0).f_msq for d in ds]
        assert min(ratio) >= 2.0 - 1e-12

    @pytest.mark.parametrize("b", [-1.0, 0.0, 0.5, 2.0])
    def test_quarter_variance(self, b):
        v = three_point_eval(ThreePointProblem(1.0), b)
        assert v.asymptotic_variance("msq", 1.0) == pytest.approx(0.25 * v.asymptotic_variance("ce", 1.0))


class TestEnumeration:
    @pytest.mark.parametrize("d", [-1.0, 0.5, 2.0])
    @pytest.mark.parametrize("bp,b", [(0.0, 0.5), (-1.0, 0.0), (0.5, -1.0)])
    def test_mean_square_unbiased(self, d, bp, b):
        prob = ThreePointProblem(d)
        expected = three_point_eval(prob, b).msq
        for n in (1, 2, 3):
            assert three_point_enumerate(prob, bp, b, n, "msq") == pytest.approx(expected, abs=1e-12)

    def test_variance_pair(self):
        assert three_point_enumerate(ThreePointProblem(0.0), 0.0, 0.0, 2, "var") == pytest.approx(2 / 9, abs=1e-14)

    def test_ic2_triple(self):
        prob = ThreePointProblem(0.5)
        got = three_point_enumerate(prob, 0.5, -1.0, 3, "ic2")
        assert got == pytest.approx(three_point_eval(prob, -1.0).var, abs=1e-12)

    def test_callable_estimator(self):
        prob = ThreePointProblem(2.0)
        mean = three_point_enumerate(prob, 0.3, 0.0, 2, lambda s, b: float(np.mean(s.z * np.exp(s.log_lp))))
        assert mean == pytest.approx(prob.alpha, abs=1e-13)

    def test_refuses_large_n(self):
        with pytest.raises(ValueError):
            three_point_enumerate(ThreePointProblem(1.0), 0.0, 0.0, MAX_ENUM + 1, "msq")

    def test_probabilities_sum_to_one(self):
        """Brute-force check of the enumeration weights themselves."""
        logp = ThreePointFamily().log_probs(0.8)
        total = sum(math.exp(sum(logp[list(i)])) for i in itertools.product(range(3), repeat=4))
        assert total == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_population_variance_nonnegative(d, b):
    if abs(d + 0.5) < 1e-9:
        return
    assert three_point_eval(ThreePointProblem(d), b).var >= -1e-12
