"""Exponentially tilted families with closed forms, used as exact oracles.

A family is tilted as ``dQ(b)/dQ(0) = exp(b.x - psi(b))``, so the likelihood
ratio back to the untilted law is ``L(b) = exp(-b.x + psi(b))``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, MeanRangeError, NoMinimizerError


class GaussianFamily:
    """Standard normal vectors shifted to mean ``b``."""

    def __init__(self, dim: int = 1):
        self.dim = dim

    def psi(self, b):
        b = np.asarray(b, dtype=float)
        return 0.5 * float(b @ b)

    def mu(self, b):
        return np.atleast_1d(np.array(b, dtype=float))

    def hess_psi(self, b):
        return np.eye(self.dim)

    def mu_inv(self, mean):
        return np.atleast_1d(np.array(mean, dtype=float))

    def in_range(self, mean) -> bool:
        return bool(np.all(np.isfinite(mean)))

    def sample(self, b, n, rng):
        return rng.standard_normal((n, self.dim)) + np.asarray(b, dtype=float)


class ThreePointFamily:
    """Uniform law on {-1, 0, 1}, tilted exponentially."""

    dim = 1
    support = np.array([-1.0, 0.0, 1.0])

    @staticmethod
    def _log_norm(b: float) -> float:
        # log(e^b + e^-b + 1), stable for large |b|
        a = abs(b)
        e = math.exp(-a)
        return a + math.log1p(e * e + e)

    def psi(self, b):
        a = abs(float(np.ravel(b)[0]))
        e = math.exp(-a)
        # log((e^b + e^-b + 1) / 3), exactly 0 at b = 0
        return a + math.log1p((e * e + e - 2.0) / 3.0)

    def log_probs(self, b) -> np.ndarray:
        b = float(np.ravel(b)[0])
        return b * self.support - self._log_norm(b)

    def mu(self, b):
        b = float(np.ravel(b)[0])
        a = abs(b)
        e = math.exp(-a)
        # (e^b - e^-b) / (e^b + e^-b + 1), divided through by e^|b|
        return np.array([math.copysign((1.0 - e * e) / (1.0 + e * e + e), b)])

    def hess_psi(self, b):
        b = float(np.ravel(b)[0])
        e = math.exp(-abs(b))
        s = 1.0 + e * e
        # (e^b + e^-b + 4) / (e^b + e^-b + 1)^2, scaled by e^|b|
        return np.array([[e * (s + 4.0 * e) / (s + e) ** 2]])

    def in_range(self, mean) -> bool:
        return bool(-1.0 < float(np.ravel(mean)[0]) < 1.0)

    def mu_inv(self, mean):
        m = float(np.ravel(mean)[0])
        if not self.in_range(m):
            raise MeanRangeError("mean must lie in (-1, 1)")
        # positive root of (1 - m) y^2 - m y - (1 + m) = 0 with y = e^b
        y = (m + math.sqrt(4.0 - 3.0 * m * m)) / (2.0 * (1.0 - m))
        return np.array([math.log(y)])

    def sample(self, b, n, rng):
        p = np.exp(self.log_probs(b))
        return rng.choice(self.support, size=(n, 1), p=p / p.sum())


class PoissonFamily:
    """Poisson law with base mean ``mean0``; tilting by ``b`` scales the mean by ``e^b``."""

    dim = 1

    def __init__(self, mean0: float = 1.0):
        if not mean0 > 0:
            raise DomainError("mean0 must be positive")
        self.mean0 = mean0

    def psi(self, b):
        return self.mean0 * math.expm1(float(np.ravel(b)[0]))

    def mu(self, b):
        return np.array([self.mean0 * math.exp(float(np.ravel(b)[0]))])

    def hess_psi(self, b):
        return np.array([[self.mean0 * math.exp(float(np.ravel(b)[0]))]])

    def in_range(self, mean) -> bool:
        return float(np.ravel(mean)[0]) > 0

    def mu_inv(self, mean):
        if not self.in_range(mean):
            raise MeanRangeError("mean must be positive")
        return np.array([math.log(float(np.ravel(mean)[0]) / self.mean0)])

    def sample(self, b, n, rng):
        return rng.poisson(self.mu(b)[0], size=(n, 1)).astype(float)


def ecm_log_likelihood(family, b, x) -> float:
    b = np.atleast_1d(np.asarray(b, dtype=float))
    try:
        psi = family.psi(b)
    except OverflowError:
        psi = math.inf
    if not np.isfinite(psi):
        raise DomainError("b lies outside the natural parameter domain")
    return float(-b @ np.atleast_1d(np.asarray(x, dtype=float)) + psi)


class EcmSample:
    """Outcomes ``x`` drawn from ``Q(b_prime)`` with payoffs and costs.

    Shares the evaluation protocol of :class:`adaptis.letgs.Sample`.
    """

    def __init__(self, family, b_prime, x, z, c=None):
        self.family = family
        self.b_prime = np.atleast_1d(np.asarray(b_prime, dtype=float))
        self.x = np.asarray(x, dtype=float).reshape(-1, self.b_prime.shape[0])
        self.z = np.asarray(z, dtype=float)
        self.c = np.ones(self.n) if c is None else np.asarray(c, dtype=float)
        self.log_lp = self.loglik(self.b_prime)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.b_prime.shape[0]

    def loglik(self, b):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return self.family.psi(b) - self.x @ b

    def loglik_grad(self, b):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return self.loglik(b), self.family.mu(b) - self.x

    def loglik_hess(self, b):
        return self.family.hess_psi(b)

    def convexity_matrix(self, b):
        # the mean-square Hessian dominates hess_psi(b) * msq(b), and
        # msq(b) >= alpha^2, estimated by the squared IS mean
        alpha = np.mean(self.z * np.exp(self.log_lp))
        return self.family.hess_psi(b) * alpha**2


def draw_ecm(family, payoff, b_prime, n, rng, cost=None) -> EcmSample:
    """Draw ``n`` outcomes at ``b_prime``; ``payoff`` and ``cost`` map (n, l) outcomes to (n,)."""
    x = family.sample(b_prime, n, rng)
    return EcmSample(family, b_prime, x, payoff(x), None if cost is None else cost(x))


def ce_closed_form(sample: EcmSample):
    """Exact minimizer of the cross-entropy estimator."""
    wts = sample.z * np.exp(sample.log_lp)
    mass = wts.sum()
    if not mass > 0:
        raise NoMinimizerError("payoff-weighted mass must be positive")
    mean = wts @ sample.x / mass
    if not sample.family.in_range(mean):
        raise MeanRangeError("weighted mean outside the family's mean range")
    return sample.family.mu_inv(mean)


@dataclass(frozen=True)
class ThreePointProblem:
    """Payoff ``Z = 1(X = 0) + d 1(X != 0)`` under the three-point family."""

    d: float

    @property
    def alpha(self) -> float:
        return (1.0 + 2.0 * self.d) / 3.0

    def payoff(self, x):
        x = np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0]
        return np.where(x == 0, 1.0, self.d)


@dataclass(frozen=True)
class ThreePointValues:
    msq: float
    var: float
    ce: float
    g: float
    f_ce: float
    f_msq: float
    f_msq2: float
    f_ic: float

    def asymptotic_variance(self, kind: str, d: float) -> float:
        f = getattr(self, f"f_{kind}")
        return self.g * (f / (2.0 * (1.0 + 5.0 * d * d))) ** 2


def three_point_eval(problem: ThreePointProblem, b: float) -> ThreePointValues:
    d = problem.d
    if d == -0.5:
        raise ValueError("f_ce is undefined at d = -1/2")
    s = math.exp(b) + math.exp(-b)
    msq = (1.0 + s) * (1.0 + d * d * s) / 9.0
    alpha = problem.alpha
    return ThreePointValues(
        msq=msq,
        var=msq - alpha**2,
        ce=alpha * ThreePointFamily().psi(b),
        g=(1.0 + s) * s,
        f_ce=abs(3.0 * d * (1.0 + 5.0 * d * d) / (1.0 + 2.0 * d)),
        f_msq=3.0 * d * d,
        f_msq2=abs(d * d - 1.0),
        f_ic=abs((d - 1.0) * (d + 5.0)) / 3.0,
    )


MAX_ENUM = 10


def three_point_enumerate(problem: ThreePointProblem, b_prime: float, b: float, n: int,
                          estimator, cost=None) -> float:
    """Exact expectation of an ``n``-sample estimator under ``Q(b_prime)^n``.

    ``estimator`` is an :class:`adaptis.estimators.EstimatorKind` or a
    callable ``(sample, b) -> value``; ``cost`` maps outcomes to costs
    (default 1).
    """
    from .estimators import evaluate

    if n > MAX_ENUM:
        raise ValueError(f"enumeration limited to n <= {MAX_ENUM}")
    fam = ThreePointFamily()
    logp = fam.log_probs(b_prime)
    total = 0.0
    bb = np.array([float(b)])
    for idx in itertools.product(range(3), repeat=n):
        idx = np.array(idx)
        x = fam.support[idx].reshape(n, 1)
        s = EcmSample(fam, [b_prime], x, problem.payoff(x), None if cost is None else cost(x))
        val = estimator(s, bb) if callable(estimator) else evaluate(estimator, s, bb).value
        total += math.exp(logp[idx].sum()) * val
    return total
