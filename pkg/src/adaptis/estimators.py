"""Importance-sampling estimators as functions of a sample and a parameter.

Every sample exposes ``z``, ``c``, ``n``, ``log_lp`` (the log likelihood
ratio at the sampling parameter) and ``loglik``/``loglik_grad``/``loglik_hess``
at any parameter ``b``. This covers both path samples and tilted-family
samples. Means of likelihood-weighted terms are taken in log space with a
max shift so that long paths do not overflow.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import LikelihoodOverflowError


class EstimatorKind(str, enum.Enum):
    CE = "ce"
    MSQ = "msq"
    MSQ2 = "msq2"
    VAR = "var"
    COST = "cost"
    IC = "ic"
    IC2 = "ic2"
    ONE = "one"


@dataclass
class EstimatorEval:
    value: float
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None


def _wmean(a, s):
    """Mean over paths of ``a * exp(s)``; ``a`` has paths on axis 0."""
    a = np.asarray(a, dtype=float)
    active = np.any(a.reshape(a.shape[0], -1) != 0, axis=1)
    if not active.any():
        return np.zeros(a.shape[1:]) if a.ndim > 1 else 0.0
    top = int(np.flatnonzero(active)[np.argmax(s[active])])
    shift = s[top]
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.where(active, np.exp(s - shift), 0.0)
        out = np.tensordot(e, a, axes=(0, 0)) / a.shape[0] * np.exp(shift)
    if not np.all(np.isfinite(out)):
        raise LikelihoodOverflowError(top)
    return out


def _centered_pairs(sample, b, logl=None):
    """``U * sum_i u_i (y_i - ybar)^2`` with ``u = L'/L(b)``, ``y = Z L(b)``.

    Equals the pair sum ``sum_{i<j} u_i u_j (y_i - y_j)^2`` without the
    cancellation of the expanded form.
    """
    if logl is None:
        logl = sample.loglik(b)
    lu = sample.log_lp - logl
    su = lu.max()
    u = np.exp(lu - su)
    nz = sample.z != 0
    if not nz.any():
        return 0.0
    sy = logl[nz].max()
    y = np.zeros_like(u)
    y[nz] = sample.z[nz] * np.exp(logl[nz] - sy)
    U = u.sum()
    ybar = (u @ y) / U
    core = U * (u @ (y - ybar) ** 2)
    if core == 0.0:
        return 0.0
    with np.errstate(over="ignore"):
        out = core * np.exp(2.0 * su + 2.0 * sy)
    if not np.isfinite(out):
        raise LikelihoodOverflowError(int(np.argmax(lu)))
    return float(out)


def est_ce(sample, b) -> EstimatorEval:
    logl, v = sample.loglik_grad(b)
    return EstimatorEval(float(_wmean(sample.z * logl, sample.log_lp)),
                         _wmean(sample.z[:, None] * v, sample.log_lp))


def est_msq(sample, b) -> EstimatorEval:
    logl, v = sample.loglik_grad(b)
    s = sample.log_lp + logl
    z2 = sample.z**2
    value = float(_wmean(z2, s))
    grad = _wmean(z2[:, None] * v, s)
    outer = _wmean(z2[:, None, None] * v[:, :, None] * v[:, None, :], s)
    lh = sample.loglik_hess(b)
    curv = value * lh if lh.ndim == 2 else _wmean(z2[:, None, None] * lh, s)
    return EstimatorEval(value, grad, curv + outer)


def est_one(sample, b) -> EstimatorEval:
    logl, v = sample.loglik_grad(b)
    s = sample.log_lp - logl
    return EstimatorEval(float(_wmean(np.ones(sample.n), s)), -_wmean(v, s))


def est_msq2(sample, b) -> EstimatorEval:
    msq = est_msq(sample, b)
    logl, v = sample.loglik_grad(b)
    s = sample.log_lp - logl
    one = float(_wmean(np.ones(sample.n), s))
    grad = msq.gradient * one - msq.value * _wmean(v, s)
    return EstimatorEval(msq.value * one, grad)


def est_var(sample, b) -> EstimatorEval:
    n = sample.n
    if n < 2:
        raise ValueError("variance estimator needs n >= 2")
    value = _centered_pairs(sample, b) / (n * (n - 1))
    return EstimatorEval(value, n / (n - 1) * est_msq2(sample, b).gradient)


def est_cost(sample, b) -> EstimatorEval:
    logl, v = sample.loglik_grad(b)
    s = sample.log_lp - logl
    return EstimatorEval(float(_wmean(sample.c, s)), -_wmean(sample.c[:, None] * v, s))


def est_ic(sample, b) -> EstimatorEval:
    n = sample.n
    var = est_var(sample, b)
    logl, v = sample.loglik_grad(b)
    s = sample.log_lp - logl
    cost = float(_wmean(sample.c, s))
    # (1/(n-1)) sum_i (C L'/L)_i grad msq2  -  (1/n) sum_i (v C L'/L)_i var
    grad = (n * cost / (n - 1)) * est_msq2(sample, b).gradient \
        - _wmean(sample.c[:, None] * v, s) * var.value
    return EstimatorEval(cost * var.value, grad)


def est_ic2(sample, b) -> EstimatorEval:
    """Unbiased inefficiency estimator from leave-one-out pair sums."""
    n = sample.n
    if n < 3:
        raise ValueError("ic2 estimator needs n >= 3")
    logl = sample.loglik(b)
    with np.errstate(over="ignore", invalid="ignore"):
        u = np.exp(sample.log_lp - logl)
        y = np.where(sample.z != 0, sample.z * np.exp(logl), 0.0)
    U = u.sum()
    B = u @ y
    # weighted mean of y with path k left out, then the centered pair sum
    u_out = U - u
    ybar = (B - u * y) / u_out
    dev = (y[None, :] - ybar[:, None]) ** 2
    dev[np.arange(n), np.arange(n)] = 0.0
    pairs = u_out * (dev @ u)
    value = float(np.mean(sample.c * u * pairs) / ((n - 1) * (n - 2)))
    if not np.isfinite(value):
        raise LikelihoodOverflowError(int(np.argmax(np.abs(sample.log_lp - logl))))
    return EstimatorEval(value)


_DISPATCH = {
    EstimatorKind.CE: est_ce,
    EstimatorKind.MSQ: est_msq,
    EstimatorKind.MSQ2: est_msq2,
    EstimatorKind.VAR: est_var,
    EstimatorKind.COST: est_cost,
    EstimatorKind.IC: est_ic,
    EstimatorKind.IC2: est_ic2,
    EstimatorKind.ONE: est_one,
}


def evaluate(kind, sample, b) -> EstimatorEval:
    return _DISPATCH[EstimatorKind(kind)](sample, np.atleast_1d(np.asarray(b, dtype=float)))
