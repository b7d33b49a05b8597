"""Multi-stage adaptive importance sampling.

Each stage draws a fresh sample at the previous stage's parameter, minimizes
an estimator over it and optionally projects the minimizer onto a ball.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ecm, letgs
from .estimators import EstimatorKind, est_msq, evaluate
from .exceptions import LikelihoodOverflowError, MeanRangeError, NoMinimizerError
from .model import ModelSpec
from .optimize import (MinResult, WolfeParams, damped_newton, minimize_ic_three_phase,
                       minimize_two_phase, project_ball, projection_radius, solve_ce)

log = logging.getLogger(__name__)


def stream(seed, *key) -> np.random.SeedSequence:
    """Child seed sequence ``(seed, key...)``; the documented splitting rule."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(seed, spawn_key=key)


class PathProblem:
    """Diffusion paths with a linear IS drift basis."""

    def __init__(self, model: ModelSpec, basis: letgs.GaussianBasis, threads: int = 1):
        self.model = model
        self.basis = basis
        self.threads = threads

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def c_min(self) -> float:
        return self.model.step

    def draw(self, b, n, seed, with_stats=True):
        return letgs.sample_batch(self.model, self.basis, b, n, seed, with_stats, self.threads)


class TiltProblem:
    """Outcomes of an exponentially tilted family with a payoff and optional cost."""

    def __init__(self, family, payoff, cost=None, c_min: float = 1.0):
        self.family = family
        self.payoff = payoff
        self.cost = cost
        self.c_min = c_min

    @property
    def dim(self) -> int:
        return self.family.dim

    def draw(self, b, n, seed, with_stats=True):
        return ecm.draw_ecm(self.family, self.payoff, b, n, np.random.default_rng(seed), self.cost)


@dataclass
class StagePlan:
    k: int
    n0: int
    estimator: EstimatorKind
    b0: np.ndarray
    seed: int = 0
    growth: float = 2.0
    radii: tuple | None = None
    grad_tol: float | None = None
    grad_tol_scale: float = 1e-2
    delta: float = 0.5
    sigma1: float = 0.1
    sigma2: float = 0.2
    fallback_radius: float = 1.0
    precondition: bool = True
    wolfe: WolfeParams = field(default_factory=WolfeParams)
    max_iter: int = 2000

    def __post_init__(self):
        self.estimator = EstimatorKind(self.estimator)
        self.b0 = np.atleast_1d(np.asarray(self.b0, dtype=float))
        if self.k < 1 or self.n0 < 1 or self.growth < 1:
            raise ValueError("need k >= 1, n0 >= 1 and growth >= 1")
        if self.estimator not in (EstimatorKind.CE, EstimatorKind.MSQ, EstimatorKind.MSQ2,
                                  EstimatorKind.VAR, EstimatorKind.IC):
            raise ValueError(f"estimator {self.estimator.value} cannot be minimized")

    def sizes(self) -> list:
        return [int(round(self.n0 * self.growth**i)) for i in range(self.k)]

    def tolerance(self, n: int, scale: float) -> float:
        """Gradient tolerance ``c n^(-3/4)`` relative to the objective size at b'."""
        if self.grad_tol is not None:
            return self.grad_tol
        return self.grad_tol_scale * n ** -0.75 * max(abs(scale), 1e-300)


@dataclass
class StageRecord:
    b: np.ndarray
    result: MinResult | None
    n: int
    mean_zl: float
    mean_cost: float
    flags: list = field(default_factory=list)


@dataclass
class StageTrace:
    stages: list

    @property
    def final(self) -> np.ndarray:
        return self.stages[-1].b

    def to_dict(self) -> dict:
        out = []
        for i, s in enumerate(self.stages, 1):
            r = s.result
            out.append({
                "stage": i,
                "b": [float(v) for v in s.b],
                "n": s.n,
                "mean_zl": s.mean_zl,
                "mean_cost": s.mean_cost,
                "flags": list(s.flags),
                "min": None if r is None else {
                    "point": [float(v) for v in r.point],
                    "value": float(r.value),
                    "grad_norm": float(r.grad_norm),
                    "iterations": int(r.iterations),
                    "status": r.status,
                    "phases": [[name, [float(v) for v in a], [float(v) for v in b]]
                               for name, a, b in r.phase_trace],
                },
            })
        return {"stages": out}


def minimize_stage(sample, plan: StagePlan, c_min: float) -> MinResult:
    kind = plan.estimator
    if kind is EstimatorKind.CE:
        if isinstance(sample, ecm.EcmSample):
            point = ecm.ce_closed_form(sample)
            return MinResult(point, evaluate(kind, sample, point).value, 0.0, 0,
                             phase_trace=[("ce-closed-form", sample.b_prime, point)])
        return solve_ce(sample)
    tol = plan.tolerance(sample.n, evaluate(kind, sample, sample.b_prime).value)
    if kind is EstimatorKind.MSQ:
        return damped_newton(lambda b: est_msq(sample, b), sample.b_prime, tol, plan.max_iter)
    if kind in (EstimatorKind.MSQ2, EstimatorKind.VAR):
        return minimize_two_phase(sample, tol, plan.delta, wolfe=plan.wolfe,
                                  precondition=plan.precondition, max_iter=plan.max_iter)
    return minimize_ic_three_phase(sample, c_min, plan.sigma1, plan.sigma2, plan.wolfe, tol,
                                   plan.delta, plan.fallback_radius,
                                   precondition=plan.precondition, max_iter=plan.max_iter)


def msm_run(problem, plan: StagePlan) -> StageTrace:
    """Run ``plan.k`` stages; a failed minimization keeps the previous parameter."""
    b = plan.b0.copy()
    stages = []
    for i, n in enumerate(plan.sizes()):
        sample = problem.draw(b, n, stream(plan.seed, 0, i))
        flags = []
        try:
            res = minimize_stage(sample, plan, problem.c_min)
            flags += res.flags
            if res.status != "converged":
                flags.append(f"minimization-{res.status}")
            new = res.point
            if plan.radii is not None:
                radius = projection_radius(i, *plan.radii)
                if np.linalg.norm(new) > radius:
                    flags.append("projected")
                new = project_ball(new, radius, b)
            if not np.all(np.isfinite(new)):
                raise NoMinimizerError("non-finite minimizer")
        except (NoMinimizerError, MeanRangeError, LikelihoodOverflowError, ValueError) as exc:
            log.warning("stage %d: %s; keeping previous parameter", i + 1, exc)
            res = None
            flags.append(f"failed: {exc}")
            new = b
        stages.append(StageRecord(np.array(new, dtype=float), res, n,
                                  float(np.mean(sample.z * np.exp(sample.log_lp))),
                                  float(np.mean(sample.c)), flags))
        b = np.array(new, dtype=float)
    return StageTrace(stages)


def final_estimate(problem, b, N: int, seed) -> float:
    """Plain IS average of ``Z L(b)`` over ``N`` fresh draws at ``b``."""
    sample = problem.draw(b, N, seed, with_stats=False)
    return float(np.mean(sample.z * np.exp(sample.log_lp)))
