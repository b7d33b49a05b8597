"""Second-stage estimation, quality measurement and statistical comparisons.

Also holds a one-dimensional finite-difference solver giving reference
values of the expectation as a function of the start point and the
corresponding zero-variance drift.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, linalg, stats

from .adaptive import stream
from .letgs import drift_eval
from .model import MGF, Committor, ExitByTime, ModelSpec

IQR_D = 1.36
WELCH_THRESHOLD = 3.0


@dataclass
class TwoStageReport:
    alpha_hat: float
    translated: float
    ci_half_width: float
    var_hat: float
    var_se: float
    cost_hat: float
    cost_se: float
    ic_hat: float
    ic_se: float
    n_used: int
    gamma: float
    mode: str

    def to_dict(self) -> dict:
        return asdict(self)


def _added(problem) -> float:
    model = getattr(problem, "model", None)
    return float(getattr(getattr(model, "functional", None), "added", 0.0))


def _moments(y, c):
    """Means, variance, inefficiency and their standard errors via influence functions."""
    n = y.size
    alpha = float(y.mean())
    dev = y - alpha
    var = float(dev @ dev / (n - 1))
    cost = float(c.mean())
    if_var = dev**2 - var
    if_cost = c - cost
    if_ic = var * if_cost + cost * if_var
    se = lambda f: float(np.std(f, ddof=1) / math.sqrt(n))
    return alpha, var, se(if_var), cost, se(if_cost), cost * var, se(if_ic)


def two_stage(problem, b, n: int | None = None, budget: float | None = None, gamma: float = 0.05,
              seed=0, block: int = 4096) -> TwoStageReport:
    """Fresh IS estimate at ``b`` with an asymptotic ``1 - gamma`` confidence interval.

    Give either ``n`` (fixed sample size) or ``budget`` (draw until the summed
    cost reaches it).
    """
    if (n is None) == (budget is None):
        raise ValueError("give exactly one of n and budget")
    z = stats.norm.ppf(1.0 - gamma / 2.0)
    if n is not None:
        if n < 2:
            raise ValueError("need n >= 2")
        s = problem.draw(b, n, seed, with_stats=False)
        y, c = s.z * np.exp(s.log_lp), s.c
    else:
        if not budget > 0:
            raise ValueError("budget must be positive")
        ys, cs, spent, j = [], [], 0.0, 0
        while spent < budget:
            s = problem.draw(b, block, stream(seed, j), with_stats=False)
            ys.append(s.z * np.exp(s.log_lp))
            cs.append(s.c)
            spent += s.c.sum()
            j += 1
        y, c = np.concatenate(ys), np.concatenate(cs)
        # first n with cumulative cost >= budget
        stop = int(np.searchsorted(np.cumsum(c), budget)) + 1
        y, c = y[:stop], c[:stop]
        if y.size < 2:
            raise ValueError("budget too small for a variance estimate")
    alpha, var, var_se, cost, cost_se, ic, ic_se = _moments(y, c)
    half = z * math.sqrt((var / y.size) if n is not None else (ic / budget))
    return TwoStageReport(alpha, alpha - _added(problem), half, var, var_se, cost, cost_se, ic,
                          ic_se, int(y.size), gamma, "fixed_n" if n is not None else "budget")


@dataclass
class QualityReport:
    ic: float
    ic_se: float
    var: float
    var_se: float
    cost: float
    cost_se: float
    K: int
    n_inner: int

    def to_dict(self) -> dict:
        return asdict(self)


def inner_estimates(y, c):
    """Per-row unbiased (ic2, var, cost) estimates for rows of a (K, n) batch at b' = b."""
    K, n = y.shape
    if n < 3:
        raise ValueError("need n_inner >= 3")
    ybar = y.mean(axis=1, keepdims=True)
    dev2 = (y - ybar) ** 2
    m2 = dev2.sum(axis=1, keepdims=True)
    var = m2[:, 0] / (n - 1)
    # sample variance of each row with one entry left out
    loo = np.clip(m2 - n / (n - 1) * dev2, 0.0, None) / (n - 2)
    ic2 = np.mean(c * loo, axis=1)
    return ic2, var, c.mean(axis=1)


def quality_outer_loop(problem, b, K: int, n_inner: int = 10, seed=0) -> QualityReport:
    """Outer-loop means and standard errors of unbiased ic, var and cost estimates."""
    s = problem.draw(b, K * n_inner, seed, with_stats=False)
    y = (s.z * np.exp(s.log_lp)).reshape(K, n_inner)
    ic2, var, cost = inner_estimates(y, s.c.reshape(K, n_inner))
    se = lambda v: float(np.std(v, ddof=1) / math.sqrt(K))
    return QualityReport(float(ic2.mean()), se(ic2), float(var.mean()), se(var),
                         float(cost.mean()), se(cost), K, n_inner)


def welch_test(mean_x, sd_x, a, mean_y, sd_y, b, threshold: float = WELCH_THRESHOLD):
    """Statistic ``(X - Y) / sqrt(sd_x^2/a + sd_y^2/b)`` and whether it exceeds ``threshold``."""
    denom = math.sqrt(sd_x**2 / a + sd_y**2 / b)
    if denom == 0:
        t = 0.0 if mean_x == mean_y else math.copysign(math.inf, mean_x - mean_y)
    else:
        t = (mean_x - mean_y) / denom
    return t, t > threshold


def welch_from_se(mean_x, se_x, mean_y, se_y, threshold: float = WELCH_THRESHOLD):
    return welch_test(mean_x, se_x, 1, mean_y, se_y, 1, threshold)


def iqr(values) -> float:
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 values")
    return float(x[(3 * n) // 4 - 1] - x[n // 4 - 1])


def iqr_with_se(values, d: float = IQR_D):
    q = iqr(values)
    return q, math.sqrt(d) * q / math.sqrt(len(values))


def iqr_ratio(x, y, d: float = IQR_D):
    """Ratio of the IQRs of two independent equal-size samples with its standard error."""
    r = iqr(x) / iqr(y)
    return r, r * math.sqrt(2.0 * d) / math.sqrt(len(x))


def cost_ratio(theoretical, practical):
    """``sum(practical) / sum(theoretical)`` with its delta-method standard error."""
    C = np.asarray(theoretical, dtype=float)
    D = np.asarray(practical, dtype=float)
    n = C.size
    p = D.sum() / C.sum()
    mc, md = C.mean(), D.mean()
    cov = np.cov(C, D, ddof=1)
    rel = cov[0, 0] / mc**2 + cov[1, 1] / md**2 - 2.0 * cov[0, 1] / (mc * md)
    sigma = p * math.sqrt(max(rel, 0.0))
    return float(p), float(sigma / math.sqrt(n))


@dataclass
class FDReference:
    grid: np.ndarray
    u: np.ndarray
    r_star: np.ndarray
    v: np.ndarray
    v_star: np.ndarray

    def value_at(self, x: float) -> float:
        return float(np.interp(x, self.grid, self.u))


def _boundary_data(model: ModelSpec):
    f = model.functional
    if isinstance(f, Committor):
        return 0.0, f.added + (0 in f.target), f.added + (1 in f.target)
    if isinstance(f, MGF):
        return -f.rate, 1.0, 1.0
    raise ValueError("time-dependent functionals have no stationary reference")


def fd_reference(model: ModelSpec, grid_size: int = 4001, c0: float | None = None) -> FDReference:
    """Solve ``eps u'' - V' u' + beta u = 0`` on the interval with the functional's boundary data.

    ``c0`` shifts the tilted potential ``V + 2F`` with ``F = -eps ln u``; by
    default it makes the tilted and original potentials agree at the target
    boundary of a committor, or on average over both ends otherwise.
    """
    if model.dim != 1:
        raise ValueError("the reference solver is one-dimensional")
    if isinstance(model.functional, ExitByTime):
        raise ValueError("time-dependent functionals have no stationary reference")
    lo, hi = float(model.domain.lower[0]), float(model.domain.upper[0])
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("the reference solver needs a bounded interval")
    beta, u_lo, u_hi = _boundary_data(model)
    eps = model.temperature
    x = np.linspace(lo, hi, grid_size)
    dx = x[1] - x[0]
    dv = np.empty(grid_size)
    g = np.empty(1)
    for i, xi in enumerate(x):
        model.grad_potential(np.array([xi]), g)
        dv[i] = g[0]
    inner = dv[1:-1]
    lower = eps / dx**2 + inner / (2 * dx)
    upper = eps / dx**2 - inner / (2 * dx)
    diag = np.full(inner.size, -2.0 * eps / dx**2 + beta)
    rhs = np.zeros(inner.size)
    rhs[0] -= lower[0] * u_lo
    rhs[-1] -= upper[-1] * u_hi
    ab = np.zeros((3, inner.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    u = np.concatenate([[u_lo], linalg.solve_banded((1, 1), ab, rhs), [u_hi]])
    if np.any(u < 0) or np.any(u[1:-1] <= 0):
        raise ValueError("solution is not positive; its logarithm is undefined")
    if model.potential is not None:
        v = np.asarray(model.potential(x), dtype=float)
    else:
        v = integrate.cumulative_trapezoid(dv, x, initial=0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logu = np.log(u)
        r_star = math.sqrt(2.0 * eps) * np.gradient(logu, x, edge_order=2)
        tilted = v - 2.0 * eps * logu
    if c0 is None:
        f = model.functional
        ends = [0, -1]
        if isinstance(f, Committor) and len(f.target) == 1:
            ends = [0] if f.target[0] == 0 else [-1]
        c0 = float(np.mean([v[i] - tilted[i] for i in ends]))
    return FDReference(x, u, r_star, v, tilted + c0)


def drift_distance(basis, b, ref: FDReference) -> float:
    """Grid L2 distance between the IS drift ``r(b)`` and the reference drift."""
    r = drift_eval(basis, b, ref.grid)
    ok = np.isfinite(ref.r_star)
    dx = ref.grid[1] - ref.grid[0]
    return float(math.sqrt(dx * np.sum((r[ok] - ref.r_star[ok]) ** 2)))
