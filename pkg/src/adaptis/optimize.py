"""Minimization engines for estimator objectives.

An objective is a callable ``b -> EstimatorEval``. Likelihood overflow while
evaluating a trial point is treated as an infinite value, so line searches
back off from it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .estimators import EstimatorEval, _centered_pairs, _wmean, est_ic, est_msq, est_msq2, est_var
from .exceptions import LikelihoodOverflowError, LineSearchError, NoMinimizerError

_EPS = np.finfo(float).eps


@dataclass
class MinResult:
    point: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    status: str = "converged"
    phase_trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass(frozen=True)
class WolfeParams:
    alpha1: float = 1e-4
    alpha2: float = 0.9

    def __post_init__(self):
        if not 0 < self.alpha1 < self.alpha2 < 1:
            raise ValueError("need 0 < alpha1 < alpha2 < 1")


@dataclass(frozen=True)
class BumpSpec:
    delta: float
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not (self.delta > 0 and self.radius > 0):
            raise ValueError("delta and radius must be positive")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))


def _safe(objective, x) -> EstimatorEval:
    try:
        e = objective(x)
    except LikelihoodOverflowError:
        return EstimatorEval(math.inf)
    if not np.isfinite(e.value):
        return EstimatorEval(math.inf)
    return e


def solve_ce(sample) -> MinResult:
    """Exact minimizer of the cross-entropy estimator of a path sample."""
    n = sample.n
    wts = sample.z * np.exp(sample.log_lp)
    A = 2.0 * np.einsum("n,nij->ij", wts, sample.G) / n
    B = -(wts @ sample.H) / n
    try:
        fac = linalg.cho_factor(A)
    except linalg.LinAlgError as exc:
        raise NoMinimizerError("cross-entropy matrix is not positive definite") from exc
    point = linalg.cho_solve(fac, B)
    resid = float(np.linalg.norm(A @ point - B))
    value = float(point @ (A / 2.0) @ point - B @ point)
    return MinResult(point, value, resid, 0, phase_trace=[("ce-solve", sample.b_prime, point)])


def damped_newton(objective: Callable, x0, grad_tol: float, max_iter: int = 100,
                  armijo: float = 0.25, shrink: float = 0.5) -> MinResult:
    """Newton steps with backtracking; gradient steps where the Hessian is not PD."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    e = objective(x)
    flags = []
    start = x.copy()
    for it in range(max_iter + 1):
        gnorm = float(np.linalg.norm(e.gradient))
        if gnorm <= grad_tol:
            return MinResult(x, e.value, gnorm, it, "converged", [("newton", start, x)], flags)
        if it == max_iter:
            break
        try:
            direction = -linalg.cho_solve(linalg.cho_factor(e.hessian), e.gradient)
        except linalg.LinAlgError:
            direction = -e.gradient
            if "gradient-step" not in flags:
                flags.append("gradient-step")
        slope = float(e.gradient @ direction)
        t = 1.0
        while True:
            trial = _safe(objective, x + t * direction)
            # allow for rounding once the decrease reaches machine precision
            if trial.value <= e.value + armijo * t * slope + 4 * _EPS * abs(e.value):
                break
            t *= shrink
            if t < 1e-16:
                return MinResult(x, e.value, gnorm, it, "failed", [("newton", start, x)],
                                 flags + ["backtracking-stalled"])
        x = x + t * direction
        e = trial
    return MinResult(x, e.value, float(np.linalg.norm(e.gradient)), max_iter, "max_iter",
                     [("newton", start, x)], flags)


def _wolfe(objective, x, direction, params: WolfeParams, e0: EstimatorEval, p0: float = 1.0,
           max_iter: int = 200):
    """Weak Wolfe step by bracketing and bisection. Returns (p, eval at x + p d)."""
    slope = float(e0.gradient @ direction)
    if slope == 0.0:
        return 0.0, e0
    if slope > 0:
        raise ValueError("direction is not a descent direction")
    lo, hi = 0.0, math.inf
    p = p0
    for _ in range(max_iter):
        e = _safe(objective, x + p * direction)
        if not e.value <= e0.value + p * params.alpha1 * slope:
            hi = p
        elif float(e.gradient @ direction) < params.alpha2 * slope:
            lo = p
        else:
            return p, e
        p = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * lo
        if p == 0.0 or (math.isfinite(hi) and hi - lo <= 1e-16 * hi):
            break
    raise LineSearchError("no Wolfe step found")


def wolfe_line_search(objective: Callable, x, direction, params: WolfeParams = WolfeParams(),
                      p0: float = 1.0) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return _wolfe(objective, x, np.asarray(direction, dtype=float), params, objective(x), p0)[0]


def bump(u, delta):
    """``(|u|^2 - 1)^3 / delta^3`` outside the unit ball, 0 inside."""
    s = float(u @ u)
    return 0.0 if s <= 1.0 else (s - 1.0) ** 3 / delta**3


def bump_modify(objective: Callable, spec: BumpSpec, weight: float | None = None) -> Callable:
    """``f(b) + weight * bump(|b - center| / radius)`` with ``weight = f(center)`` by default."""
    if weight is None:
        weight = objective(spec.center).value
    R, dl = spec.radius, spec.delta

    def modified(b):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        e = objective(b)
        u = (b - spec.center) / R
        s = float(u @ u)
        if s <= 1.0:
            return e
        value = e.value + weight * (s - 1.0) ** 3 / dl**3
        grad = None if e.gradient is None else \
            e.gradient + weight * 6.0 * (s - 1.0) ** 2 * u / (dl**3 * R)
        hess = None
        if e.hessian is not None:
            hb = (6.0 * (s - 1.0) ** 2 * np.eye(u.size) + 24.0 * (s - 1.0) * np.outer(u, u))
            hess = e.hessian + weight * hb / (dl**3 * R**2)
        return EstimatorEval(value, grad, hess)

    return modified


def gradient_descent(objective: Callable, x0, grad_tol: float, wolfe: WolfeParams = WolfeParams(),
                     precond=None, max_iter: int = 2000, e0: EstimatorEval | None = None) -> MinResult:
    """Descent along ``-P grad`` with Wolfe steps; ``P`` is a fixed SPD matrix."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    e = objective(x) if e0 is None else e0
    p = 1.0
    start = x.copy()
    for it in range(max_iter + 1):
        gnorm = float(np.linalg.norm(e.gradient))
        if gnorm <= grad_tol:
            return MinResult(x, e.value, gnorm, it, "converged", [("descent", start, x)])
        if it == max_iter:
            break
        direction = -(e.gradient if precond is None else precond @ e.gradient)
        try:
            p, e_new = _wolfe(objective, x, direction, wolfe, e, p0=p)
        except LineSearchError:
            return MinResult(x, e.value, gnorm, it, "failed", [("descent", start, x)],
                             ["line-search-failed"])
        x = x + p * direction
        e = e_new
    return MinResult(x, e.value, float(np.linalg.norm(e.gradient)), max_iter, "max_iter",
                     [("descent", start, x)])


def project_ball(b, radius: float, fallback) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return b if np.linalg.norm(b) <= radius else np.asarray(fallback, dtype=float)


def projection_radius(i: int, B1: float, B2: float) -> float:
    """Radius ``sqrt(B1 + B2 (i + 1))`` for stage ``i``."""
    return math.sqrt(B1 + B2 * (i + 1))


def _msq2_excess(sample):
    """``msq2 - m[Z L']^2``: same minimizers and gradient as msq2, no cancellation."""
    n = sample.n

    def f(b):
        value = _centered_pairs(sample, b) / n**2
        return EstimatorEval(value, est_msq2(sample, b).gradient)

    return f


def _phase_one(sample, grad_tol, x0, max_iter):
    start = sample.b_prime if x0 is None else x0
    res = damped_newton(lambda b: est_msq(sample, b), start, grad_tol, max_iter)
    if res.status == "failed":
        raise NoMinimizerError("mean-square phase failed: " + ", ".join(res.flags))
    return res


def _precond(sample, d, precondition):
    if not precondition:
        return None
    try:
        return linalg.inv(est_msq(sample, d).hessian, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return None


def minimize_two_phase(sample, grad_tol: float, delta: float = 0.5,
                       radius: Callable = lambda x: float(np.linalg.norm(x)) + 1.0,
                       wolfe: WolfeParams = WolfeParams(), x0=None, precondition: bool = True,
                       max_iter: int = 2000) -> MinResult:
    """Newton on the mean square, then Wolfe descent on the bump-modified msq2."""
    first = _phase_one(sample, grad_tol, x0, max_iter)
    d = first.point
    offset = float(_wmean(sample.z, sample.log_lp)) ** 2
    spec = BumpSpec(delta, d, radius(d))
    obj = bump_modify(_msq2_excess(sample), spec, weight=est_msq2(sample, d).value)
    second = gradient_descent(obj, d, grad_tol, wolfe, _precond(sample, d, precondition), max_iter)
    trace = first.phase_trace + [("msq2-descent", d, second.point)]
    return MinResult(second.point, second.value + offset, second.grad_norm,
                     first.iterations + second.iterations, second.status, trace,
                     first.flags + second.flags)


def ic_radius(sample, d, c_min: float, sigma2: float, fallback: float) -> float:
    """Bump radius from the smallest eigenvalue of the convexity matrix at b'."""
    m = float(np.linalg.eigvalsh(sample.convexity_matrix(sample.b_prime)).min())
    ic = est_ic(sample, d).value
    var = est_var(sample, d).value
    if m <= 0 or ic - c_min * var <= 0:
        return fallback
    rad = 2.0 / m * (ic / c_min - var) + sigma2
    return math.sqrt(rad) if rad > 0 else fallback


def minimize_ic_three_phase(sample, c_min: float, sigma1: float = 0.1, sigma2: float = 0.2,
                            wolfe: WolfeParams = WolfeParams(), grad_tol: float = 1e-8,
                            delta: float = 0.5, fallback_radius: float = 1.0, x0=None,
                            precondition: bool = True, max_iter: int = 2000) -> MinResult:
    """Newton on the mean square, one steepest Wolfe step, then descent on the modified ic."""
    if not 0 < sigma1 < sigma2:
        raise ValueError("need 0 < sigma1 < sigma2")
    if not c_min > 0:
        raise ValueError("c_min must be positive")
    first = _phase_one(sample, grad_tol, x0, max_iter)
    d = first.point
    r = ic_radius(sample, d, c_min, sigma2, fallback_radius)
    obj = bump_modify(lambda b: est_ic(sample, b), BumpSpec(delta, d, r))
    e_d = obj(d)
    flags = list(first.flags)
    try:
        p, e1 = _wolfe(obj, d, -e_d.gradient, wolfe, e_d)
        d1 = d - p * e_d.gradient
    except LineSearchError:
        flags.append("wolfe-step-failed")
        d1, e1 = d, e_d
    third = gradient_descent(obj, d1, grad_tol, wolfe, _precond(sample, d, precondition),
                             max_iter, e0=e1)
    trace = first.phase_trace + [("wolfe-step", d, d1), ("ic-descent", d1, third.point)]
    return MinResult(third.point, third.value, third.grad_norm,
                     first.iterations + 1 + third.iterations, third.status, trace,
                     flags + third.flags)

