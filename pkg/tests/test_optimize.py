import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptis.ecm import GaussianFamily, draw_ecm
from adaptis.estimators import EstimatorEval, est_ic, est_msq, est_msq2
from adaptis.exceptions import LineSearchError, NoMinimizerError
from adaptis.optimize import (BumpSpec, WolfeParams, bump, bump_modify, damped_newton,
                              gradient_descent, ic_radius, minimize_ic_three_phase,
                              minimize_two_phase, project_ball, projection_radius, solve_ce,
                              wolfe_line_search)

from conftest import manual_sample, synthetic_sample


def quadratic(A, c):
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    return lambda x: EstimatorEval(0.5 * x @ A @ x - c @ x, A @ x - c, A)


def wolfe_holds(f, x, d, p, params):
    e0, e1 = f(x), f(x + p * d)
    slope = e0.gradient @ d
    return (e1.value <= e0.value + p * params.alpha1 * slope
            and e1.gradient @ d >= params.alpha2 * slope)


def zero_variance_sample(l, n, seed, c):
    fam = GaussianFamily(l)
    return draw_ecm(fam, lambda x: np.exp(x @ c), np.zeros(l), n, np.random.default_rng(seed))


class TestSolveCE:
    def test_single_path(self):
        s = manual_sample([1.0], [[[0.5]]], [[-0.7]])
        r = solve_ce(s)
        assert r.point[0] == pytest.approx(0.7)
        assert r.grad_norm < 1e-14

    def test_zero_payoffs(self):
        s = manual_sample([0.0, 0.0], [[[0.5]], [[1.0]]], [[-0.7], [0.2]])
        with pytest.raises(NoMinimizerError):
            solve_ce(s)

    def test_stationary_point_of_estimator(self, rng):
        from adaptis.estimators import est_ce

        s = synthetic_sample(rng, n=30, l=4, b_prime=[0.1, 0.0, -0.2, 0.3])
        r = solve_ce(s)
        np.testing.assert_allclose(est_ce(s, r.point).gradient, 0.0, atol=1e-12)


class TestDampedNewton:
    def test_quadratic_one_step(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        r = damped_newton(quadratic(A, [1.0, -1.0]), np.array([5.0, 5.0]), 1e-12)
        assert r.iterations == 1
        np.testing.assert_allclose(r.point, np.linalg.solve(A, [1.0, -1.0]), atol=1e-14)

    def test_start_at_minimizer(self):
        r = damped_newton(quadratic(np.eye(2), [1.0, 2.0]), np.array([1.0, 2.0]), 1e-12)
        assert r.iterations == 0
        assert r.converged

    def test_mean_square_converges(self, rng):
        s = synthetic_sample(rng, n=25, l=5, zero_frac=0.0)
        r = damped_newton(lambda b: est_msq(s, b), np.zeros(5), 1e-8)
        assert r.converged
        assert np.linalg.norm(est_msq(s, r.point).gradient) <= 1e-8

    def test_monotone_values(self, rng):
        s = synthetic_sample(rng, n=25, l=5, zero_frac=0.0)
        x0 = 2.0 * np.ones(5)
        vals = [damped_newton(lambda b: est_msq(s, b), x0, 0.0, max_iter=k).value for k in range(8)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < vals[0]

    def test_indefinite_hessian_flags_gradient_step(self):
        f = lambda x: EstimatorEval(float(x[0] ** 4 - x[0] ** 2), np.array([4 * x[0] ** 3 - 2 * x[0]]),
                                    np.array([[12 * x[0] ** 2 - 2]]))
        r = damped_newton(f, np.array([0.1]), 1e-10)
        assert "gradient-step" in r.flags
        assert r.converged
        assert abs(r.point[0]) == pytest.approx(1 / math.sqrt(2), rel=1e-8)

    def test_iteration_cap(self):
        f = lambda x: EstimatorEval(float(np.cosh(x[0])), np.array([np.sinh(x[0])]), np.array([[np.cosh(x[0])]]))
        r = damped_newton(f, np.array([8.0]), 1e-14, max_iter=2)
        assert r.status == "max_iter"


class TestWolfe:
    def test_hand_example(self):
        """f = x^2, x = 1, direction -2: the step 0.5 lands on the minimizer and is admissible."""
        f = lambda x: EstimatorEval(float(x @ x), 2 * x)
        params = WolfeParams()
        assert wolfe_holds(f, np.array([1.0]), np.array([-2.0]), 0.5, params)
        p = wolfe_line_search(f, np.array([1.0]), np.array([-2.0]), params)
        assert wolfe_holds(f, np.array([1.0]), np.array([-2.0]), p, params)

    def test_zero_slope(self):
        f = lambda x: EstimatorEval(float(x @ x), 2 * x)
        assert wolfe_line_search(f, np.zeros(2), np.array([1.0, 0.0])) == 0.0

    def test_ascent_direction_rejected(self):
        f = lambda x: EstimatorEval(float(x @ x), 2 * x)
        with pytest.raises(ValueError):
            wolfe_line_search(f, np.array([1.0]), np.array([1.0]))

    def test_unbounded_below_fails(self):
        f = lambda x: EstimatorEval(float(-x[0]), np.array([-1.0]))
        with pytest.raises(LineSearchError):
            wolfe_line_search(f, np.zeros(1), np.array([1.0]))

    def test_parameter_order(self):
        with pytest.raises(ValueError):
            WolfeParams(0.9, 0.1)

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random_quadratics(self, seed):
        rng = np.random.default_rng(seed)
        l = int(rng.integers(1, 6))
        M = rng.standard_normal((l, l))
        A = M @ M.T + 0.05 * np.eye(l)
        f = quadratic(A, rng.standard_normal(l))
        x = 3 * rng.standard_normal(l)
        g = f(x).gradient
        d = -g if rng.uniform() < 0.5 else -(np.diag(rng.uniform(0.1, 10, l)) @ g)
        params = WolfeParams(rng.uniform(1e-5, 0.3), rng.uniform(0.5, 0.99))
        p = wolfe_line_search(f, x, d, params, p0=float(rng.uniform(0.01, 10)))
        assert p > 0
        assert wolfe_holds(f, x, d, p, params)

    def test_mean_square_objectives(self, rng):
        params = WolfeParams()
        for _ in range(50):
            s = synthetic_sample(rng, n=10, l=4, zero_frac=0.0)
            f = lambda b: est_msq(s, b)
            x = rng.standard_normal(4)
            d = -f(x).gradient
            p = wolfe_line_search(f, x, d, params)
            assert wolfe_holds(f, x, d, p, params)


class TestBump:
    def test_profile(self):
        assert bump(np.array([0.6, 0.8]), 0.5) == 0.0
        u = np.array([1.0 + 2 * 0.5, 0.0])
        assert bump(u, 0.5) > 1.0

    def test_unchanged_inside(self, rng):
        s = synthetic_sample(rng, n=10, l=2)
        f = lambda b: est_msq(s, b)
        g = bump_modify(f, BumpSpec(0.5, np.zeros(2), 1.0))
        x = np.array([0.3, -0.5])
        assert g(x).value == f(x).value
        np.testing.assert_array_equal(g(x).gradient, f(x).gradient)

    def test_raised_outside(self, rng):
        s = synthetic_sample(rng, n=10, l=2)
        f = lambda b: est_msq(s, b)
        g = bump_modify(f, BumpSpec(0.5, np.zeros(2), 1.0))
        x = np.array([2.0, 0.0])
        assert g(x).value > f(np.zeros(2)).value

    def test_smooth_across_seam(self, rng):
        s = synthetic_sample(rng, n=10, l=2)
        g = bump_modify(lambda b: est_msq(s, b), BumpSpec(0.3, np.array([0.1, 0.2]), 0.7))
        center = np.array([0.1, 0.2])
        direction = np.array([0.6, 0.8])
        for r in (0.7 - 1e-3, 0.7 + 1e-3, 0.9, 1.4):
            x = center + r * direction
            e = g(x)
            for i in range(2):
                h = np.zeros(2)
                h[i] = 1e-6
                fd = (g(x + h).value - g(x - h).value) / 2e-6
                assert fd == pytest.approx(e.gradient[i], rel=1e-6, abs=1e-8)
                fdh = (g(x + h).gradient - g(x - h).gradient) / 2e-6
                np.testing.assert_allclose(e.hessian[i], fdh, rtol=1e-5, atol=1e-6)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            BumpSpec(0.0, np.zeros(1), 1.0)


class TestTwoPhase:
    def test_single_outcome_returns_first_phase(self, rng):
        s = synthetic_sample(rng, n=1, l=2, zero_frac=0.0)
        r = minimize_two_phase(s, 1e-10)
        first = r.phase_trace[0][2]
        np.testing.assert_allclose(r.point, first)

    @pytest.mark.parametrize("l,c", [(1, [0.5]), (3, [0.3, -0.2, 0.4])])
    def test_zero_variance_recovery(self, l, c):
        c = np.array(c)
        for seed in range(10):
            s = zero_variance_sample(l, 10, seed, c)
            r = minimize_two_phase(s, 1e-12)
            np.testing.assert_allclose(r.point, c, atol=1e-8)

    def test_value_never_increases(self, rng):
        s = synthetic_sample(rng, n=30, l=3, zero_frac=0.0)
        r = minimize_two_phase(s, 1e-8)
        d = r.phase_trace[0][2]
        assert r.value <= est_msq2(s, d).value * (1 + 1e-12)
        assert r.converged
        assert r.value == pytest.approx(est_msq2(s, r.point).value, rel=1e-9)


class TestThreePhase:
    def test_zero_variance_recovery(self):
        c = np.array([0.3, -0.2, 0.4])
        for seed in range(10):
            s = zero_variance_sample(3, 100, seed, c)
            r = minimize_ic_three_phase(s, 1.0, grad_tol=1e-12)
            np.testing.assert_allclose(r.point, c, atol=1e-8)

    def test_agrees_with_two_phase_for_unit_cost(self):
        c = np.array([-0.6])
        s = zero_variance_sample(1, 60, 3, c)
        a = minimize_two_phase(s, 1e-12)
        b = minimize_ic_three_phase(s, 1.0, grad_tol=1e-12)
        np.testing.assert_allclose(a.point, b.point, atol=1e-6)

    def test_monotone_value_chain(self, rng):
        s = synthetic_sample(rng, n=40, l=3, zero_frac=0.0, b_prime=[0.2, 0.1, 0.0])
        r = minimize_ic_three_phase(s, 0.01, grad_tol=1e-9)
        d = r.phase_trace[0][2]
        d1 = r.phase_trace[1][2]
        rad = ic_radius(s, d, 0.01, 0.2, 1.0)
        obj = bump_modify(lambda b: est_ic(s, b), BumpSpec(0.5, d, rad))
        assert obj(d1).value <= obj(d).value
        assert r.value <= obj(d1).value
        assert np.linalg.norm(obj(r.point).gradient) <= 1e-9

    def test_fallback_radius_without_curvature(self):
        s = manual_sample([1.0, 2.0, 0.5], np.zeros((3, 1, 1)), np.array([[0.1], [0.2], [-0.1]]))
        assert ic_radius(s, np.zeros(1), 0.01, 0.2, 1.7) == 1.7

    def test_argument_checks(self, rng):
        s = synthetic_sample(rng)
        with pytest.raises(ValueError):
            minimize_ic_three_phase(s, 0.01, sigma1=0.3, sigma2=0.2)
        with pytest.raises(ValueError):
            minimize_ic_three_phase(s, 0.0)


class TestDescentAndProjection:
    def test_preconditioned_descent(self):
        A = np.diag([1.0, 100.0])
        f = quadratic(A, [1.0, 1.0])
        plain = gradient_descent(f, np.zeros(2), 1e-10)
        pre = gradient_descent(f, np.zeros(2), 1e-10, precond=np.linalg.inv(A))
        assert pre.iterations < plain.iterations
        np.testing.assert_allclose(pre.point, [1.0, 0.01], atol=1e-10)

    def test_project_ball(self):
        b = np.array([0.3, 0.4])
        np.testing.assert_array_equal(project_ball(b, 1.0, np.zeros(2)), b)
        np.testing.assert_array_equal(project_ball(3 * b, 1.0, np.zeros(2)), np.zeros(2))

    def test_radius_schedule_grows(self):
        radii = [projection_radius(i, 1.0, 2.0) for i in range(100)]
        assert radii[0] == pytest.approx(math.sqrt(3.0))
        assert all(b > a for a, b in zip(radii, radii[1:]))
        assert radii[-1] > 14
