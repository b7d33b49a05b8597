"""Euler-scheme stopped diffusions: dynamics, stopping rules, payoffs and costs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Union

import numpy as np
from numba import njit
from scipy import integrate, stats

from .exceptions import DominationUnavailableError, NumericalBlowupError

# exit labels: face 2j is the lower side of coordinate j, 2j+1 the upper one
LOWER = 0
UPPER = 1
TRUNCATED = -1
HORIZON = -2


@dataclass(frozen=True)
class Box:
    """Open box ``prod_j (lower_j, upper_j)``; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, a1: float, a2: float) -> "Box":
        return cls(np.array([a1]), np.array([a2]))

    @classmethod
    def whole_space(cls, dim: int = 1) -> "Box":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lower) and np.all(x < self.upper))

    def exit_face(self, x) -> int:
        """Face crossed by ``x``, or -1 while ``x`` is still inside."""
        for j in range(self.dim):
            if x[j] <= self.lower[j]:
                return 2 * j
            if x[j] >= self.upper[j]:
                return 2 * j + 1
        return -1


@dataclass(frozen=True)
class MGF:
    """Moment-generating function of the exit time, ``E exp(-rate * h * tau)``."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")


@dataclass(frozen=True)
class Committor:
    """Translated committor ``added + P(exit through one of the target faces)``."""

    target: tuple = (UPPER,)
    added: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(int(f) for f in self.target))


@dataclass(frozen=True)
class ExitByTime:
    """Translated probability of leaving the domain before ``horizon``."""

    horizon: float
    added: float = 0.0


Functional = Union[MGF, Committor, ExitByTime]


@njit(cache=True)
def three_well_potential(x):
    return (0.5 * x**6 - 15.0 * x**4 + 119.0 * x**2 + 28.0 * x + 50.0) / 200.0


@njit(cache=True, nogil=True)
def three_well_grad(x, out):
    y = x[0]
    out[0] = (3.0 * y**5 - 60.0 * y**3 + 238.0 * y + 28.0) / 200.0


@njit(cache=True)
def flat_potential(x):
    return 0.0 * x


@njit(cache=True, nogil=True)
def flat_grad(x, out):
    for j in range(x.shape[0]):
        out[j] = 0.0


@dataclass(frozen=True)
class ModelSpec:
    """A stopped Euler scheme ``X_{k+1} = X_k - h grad V(X_k) + sqrt(2 eps h) xi``.

    ``grad_potential(x, out)`` writes the gradient of the potential at ``x``
    into ``out``; pass a numba-jitted function to use the fast batch sampler.
    ``potential`` is an optional vectorized callable, needed only by the
    finite-difference reference.
    """

    grad_potential: Callable
    temperature: float
    step: float
    start: np.ndarray
    domain: Box
    functional: Functional
    step_cap: int = 10**6
    truncation_payoff: float | None = None
    potential: Callable | None = None

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.start, dtype=float))
        object.__setattr__(self, "start", x0)
        if self.temperature < 0 or not self.step > 0:
            raise ValueError("need temperature >= 0 and step > 0")
        if x0.shape[0] != self.domain.dim or not self.domain.contains(x0):
            raise ValueError("start must lie inside the domain")
        if int(self.step_cap) < 1:
            raise ValueError("step_cap must be at least 1")
        if isinstance(self.functional, ExitByTime) and self.functional.horizon < self.step:
            raise ValueError("horizon must be at least one step")

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def sigma(self) -> float:
        return math.sqrt(2.0 * self.temperature)

    @property
    def horizon_steps(self) -> int:
        """Step count at which the time horizon stops a path (huge if none)."""
        if isinstance(self.functional, ExitByTime):
            # guard against T/h landing just below an integer
            return int(math.floor(self.functional.horizon / self.step + 1e-9))
        return np.iinfo(np.int64).max

    @property
    def z_truncated(self) -> float:
        if self.truncation_payoff is not None:
            return float(self.truncation_payoff)
        f = self.functional
        if isinstance(f, MGF):
            return 0.5 * math.exp(-f.rate * self.step * (self.step_cap + 1))
        return f.added + 0.5


def three_well_model(functional: Functional, temperature: float = 0.5, step: float = 0.01,
                     start: float = 0.0, bounds=(-3.5, 3.5), step_cap: int = 10**6) -> ModelSpec:
    """The one-dimensional three-well benchmark problem."""
    return ModelSpec(three_well_grad, temperature, step, np.array([start]),
                     Box.interval(*bounds), functional, step_cap,
                     potential=three_well_potential)


@dataclass
class RawPath:
    states: np.ndarray
    coord_noises: np.ndarray
    tau: int
    exit_label: int = field(default=TRUNCATED)

    @property
    def truncated(self) -> bool:
        return self.exit_label == TRUNCATED


def _noise_source(rng, dim):
    if isinstance(rng, np.random.Generator):
        return lambda: rng.standard_normal(dim)
    it = iter(rng)
    return lambda: np.asarray(next(it), dtype=float).reshape(dim)


def simulate_path(model: ModelSpec, total_drift: Callable, rng) -> RawPath:
    """Simulate one path with drift ``total_drift(x, t)``.

    ``rng`` is a numpy Generator or any iterable of standard-normal vectors,
    which allows replaying an exact noise sequence.
    """
    m = model.dim
    h = model.step
    sig = model.sigma
    draw = _noise_source(rng, m)
    grad = np.empty(m)
    x = model.start.copy()
    states = [x.copy()]
    etas = []
    label = TRUNCATED
    k = 0
    stop = min(model.step_cap, model.horizon_steps)
    while k < stop:
        mu = np.asarray(total_drift(x, k * h), dtype=float).reshape(m)
        xi = draw()
        if sig > 0:
            model.grad_potential(x, grad)
            eta = xi + math.sqrt(h) * (mu + grad) / sig
        else:
            eta = xi
        x = x + h * mu + math.sqrt(h) * sig * xi
        k += 1
        if not np.all(np.isfinite(x)):
            raise NumericalBlowupError(k)
        states.append(x.copy())
        etas.append(eta)
        face = model.domain.exit_face(x)
        if face >= 0:
            label = face
            break
    else:
        if k == model.horizon_steps:
            label = HORIZON
    return RawPath(np.array(states), np.array(etas).reshape(k, m), k, label)


def payoff(model: ModelSpec, tau, label) -> np.ndarray:
    """Vectorized payoff Z from stopping steps and exit labels."""
    tau = np.asarray(tau)
    label = np.asarray(label)
    f = model.functional
    exited = label >= 0
    if isinstance(f, MGF):
        z = np.where(exited, np.exp(-f.rate * model.step * tau), 0.0)
    elif isinstance(f, Committor):
        z = f.added + np.isin(label, f.target).astype(float)
    else:
        z = f.added + exited.astype(float)
    return np.where(label == TRUNCATED, model.z_truncated, z)


def functional_value(model: ModelSpec, path: RawPath) -> float:
    return float(payoff(model, path.tau, path.exit_label))


def cost_value(model: ModelSpec, path: RawPath) -> float:
    return model.step * path.tau


def geometric_tail_prob(threshold: float, delta_i: float, deltas_other: Iterable[float] = ()) -> float:
    """``P(|xi_i delta_i| > threshold + |sum_j xi_j delta_j|)`` for iid standard normals."""
    if not delta_i > 0:
        raise ValueError("delta_i must be positive")
    if math.isinf(threshold):
        return 0.0
    s = math.sqrt(sum(float(d) ** 2 for d in deltas_other))
    tail = lambda u: 2.0 * stats.norm.sf((threshold + s * abs(u)) / delta_i)
    if s == 0.0:
        return float(tail(0.0))
    val, _ = integrate.quad(lambda u: tail(u) * stats.norm.pdf(u), -np.inf, np.inf)
    return float(val)


def geometric_tail(model: ModelSpec, drift_bound: float, direction) -> float:
    """Success probability q of a geometric variable dominating the exit step.

    ``drift_bound`` bounds ``|v . mu(x)|`` over the domain for the total
    drift ``mu`` and direction ``v``.
    """
    v = np.atleast_1d(np.asarray(direction, dtype=float))
    if not np.any(v):
        raise ValueError("direction must be nonzero")
    width = model.domain.upper - model.domain.lower
    spread = np.abs(v) * width
    if np.any(np.isinf(spread[v != 0])):
        raise DominationUnavailableError("domain is unbounded along the direction")
    h = model.step
    bound = float(np.sum(spread[v != 0])) + h * drift_bound
    deltas = model.sigma * np.abs(v)
    i = int(np.argmax(deltas))
    if deltas[i] == 0:
        raise DominationUnavailableError("no noise along the direction")
    return geometric_tail_prob(bound / math.sqrt(h), deltas[i], np.delete(deltas, i))


def truncation_error_bound(M_s: float, tail_prob: float) -> float:
    if M_s < 0:
        raise ValueError("M_s must be nonnegative")
    return M_s * tail_prob


def geometric_truncation_bound(M_s: float, q: float, s: int) -> float:
    """Truncation bias bound when the exit step is dominated by Geometric(q)."""
    return truncation_error_bound(M_s, (1.0 - q) ** s)
