"""Linearly tilted Gaussian stopped sequences.

Paths are simulated under a drift ``r(b') = sum_i b'_i r_i`` and summarised
by per-path statistics ``(Z, C, tau, G, H, w)``. Given these, the log
likelihood ratio at any parameter is the quadratic ``b.G.b + H.b``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

from . import _kernels
from .exceptions import NumericalBlowupError
from .model import ModelSpec, payoff

CHUNK = 256


@njit(cache=True, nogil=True, error_model="numpy")
def gaussian_theta(x, t, params, out):
    # params: [sqrt(h) * scale, 1 / width^2, time power, M, centers...]
    amp = params[0]
    inv_w2 = params[1]
    power = params[2]
    M = int(params[3])
    tp = t ** power if out.shape[1] > M else 1.0
    y = x[0]
    for i in range(M):
        d = y - params[4 + i]
        v = amp * np.exp(-d * d * inv_w2)
        out[0, i] = v
        if out.shape[1] > M:
            out[0, M + i] = tp * v


@dataclass(frozen=True)
class GaussianBasis:
    """Gaussian bumps ``scale * exp(-(x - c_i)^2 / width^2)`` on a line.

    With ``time_power`` set, the basis is doubled by the functions
    ``t**time_power * r_i(x)``, giving ``l = 2M`` parameters.
    """

    centers: np.ndarray
    width: float
    scale: float
    time_power: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))

    @classmethod
    def uniform(cls, lo: float, hi: float, M: int, temperature: float, time_power=None):
        """M bumps on [lo, hi] spaced by their width, scaled by 1/sqrt(eps)."""
        width = (hi - lo) / (M - 1)
        return cls(lo + width * np.arange(M), width, 1.0 / math.sqrt(temperature), time_power)

    @property
    def M(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.M if self.time_power is not None else self.M

    theta_fn = staticmethod(gaussian_theta)

    def params(self, step: float) -> np.ndarray:
        head = [math.sqrt(step) * self.scale, 1.0 / self.width**2,
                float(self.time_power or 0.0), float(self.M)]
        return np.concatenate([head, self.centers])

    def evaluate(self, x, t: float = 0.0) -> np.ndarray:
        """Basis values at points ``x`` (shape (k,) or scalar) as a (k, l) array."""
        x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        vals = self.scale * np.exp(-((x[:, None] - self.centers) ** 2) / self.width**2)
        if self.time_power is not None:
            vals = np.hstack([vals, t**self.time_power * vals])
        return vals


def drift_eval(basis: GaussianBasis, b, x, t: float = 0.0) -> np.ndarray:
    """IS drift ``r(b)(x, t)``; vectorized over a grid of points."""
    return basis.evaluate(x, t) @ np.asarray(b, dtype=float)


def tilted_drift(model: ModelSpec, basis: GaussianBasis, b):
    """Total drift ``-grad V + sigma r(b)`` for :func:`adaptis.model.simulate_path`."""
    b = np.asarray(b, dtype=float)
    g = np.empty(model.dim)

    def drift(x, t):
        model.grad_potential(x, g)
        return -g + model.sigma * drift_eval(basis, b, x[0], t)

    return drift


@dataclass(frozen=True)
class PathStats:
    z: float
    c: float
    tau: int
    G: np.ndarray
    H: np.ndarray
    w: float
    sampled_at: np.ndarray


def log_likelihood(stats: PathStats, b) -> float:
    b = np.asarray(b, dtype=float)
    return float(b @ stats.G @ b + stats.H @ b)


def raw_path_stats(model: ModelSpec, basis: GaussianBasis, path, b_prime) -> PathStats:
    """Accumulate path statistics from a simulated :class:`RawPath`."""
    l = basis.dim
    G = np.zeros((l, l))
    H = np.zeros(l)
    for k in range(path.tau):
        theta = math.sqrt(model.step) * basis.evaluate(path.states[k][0], k * model.step)
        G += 0.5 * theta.T @ theta
        H -= path.coord_noises[k] @ theta
    w = float(np.sum(path.coord_noises**2))
    z = float(payoff(model, path.tau, path.exit_label))
    return PathStats(z, model.step * path.tau, path.tau, G, H, w, np.asarray(b_prime, dtype=float))


def _tri(l):
    return np.triu_indices(l)


class Sample:
    """An immutable batch of path statistics drawn at ``b_prime``.

    ``G`` is stored packed (upper triangle, row-major). Samples drawn without
    statistics only support evaluation at ``b = b_prime``.
    """

    def __init__(self, b_prime, z, c, tau, w, H=None, G_packed=None, label=None, seed=None,
                 log_lp=None):
        self.b_prime = np.asarray(b_prime, dtype=float)
        self.z = np.asarray(z, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.tau = np.asarray(tau, dtype=np.int64)
        self.w = np.asarray(w, dtype=float)
        self.H = None if H is None else np.asarray(H, dtype=float)
        self.G_packed = None if G_packed is None else np.asarray(G_packed, dtype=float)
        self.label = None if label is None else np.asarray(label)
        self.seed = seed
        if self.has_stats:
            self.log_lp = self.loglik(self.b_prime)
        else:
            self.log_lp = np.asarray(log_lp, dtype=float)
        for a in (self.z, self.c, self.tau, self.w, self.H, self.G_packed, self.log_lp):
            if a is not None:
                a.flags.writeable = False

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.b_prime.shape[0]

    @property
    def has_stats(self) -> bool:
        return self.G_packed is not None

    @cached_property
    def G(self) -> np.ndarray:
        l = self.dim
        iu = _tri(l)
        full = np.zeros((self.n, l, l))
        full[:, iu[0], iu[1]] = self.G_packed
        full[:, iu[1], iu[0]] = self.G_packed
        full.flags.writeable = False
        return full

    def _quad(self, b):
        iu = _tri(self.dim)
        coef = b[iu[0]] * b[iu[1]] * np.where(iu[0] == iu[1], 1.0, 2.0)
        return self.G_packed @ coef

    def loglik(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if not self.has_stats:
            if not np.array_equal(b, self.b_prime):
                raise ValueError("sample has no statistics; only b = b_prime is available")
            return self.log_lp
        return self._quad(b) + self.H @ b

    def loglik_grad(self, b):
        """Log likelihoods and their gradients ``2 G b + H`` per path."""
        b = np.asarray(b, dtype=float)
        return self.loglik(b), 2.0 * (self.G @ b) + self.H

    def loglik_hess(self, b) -> np.ndarray:
        return 2.0 * self.G

    def convexity_matrix(self, b) -> np.ndarray:
        """Sample average of ``2 L(b) G Z^2 exp(-w/2)``."""
        wts = self.z**2 * np.exp(self.loglik(b) - 0.5 * self.w)
        return 2.0 * np.einsum("n,nij->ij", wts, self.G) / self.n

    @property
    def paths(self) -> list:
        return [PathStats(float(self.z[i]), float(self.c[i]), int(self.tau[i]),
                          self.G[i].copy(), self.H[i].copy(), float(self.w[i]), self.b_prime)
                for i in range(self.n)]

    @classmethod
    def from_paths(cls, paths, b_prime=None, seed=None) -> "Sample":
        if b_prime is None:
            b_prime = paths[0].sampled_at
        b_prime = np.asarray(b_prime, dtype=float)
        for p in paths:
            if not np.array_equal(p.sampled_at, b_prime):
                raise ValueError("every path must be sampled at b_prime")
        iu = _tri(b_prime.shape[0])
        return cls(b_prime, [p.z for p in paths], [p.c for p in paths], [p.tau for p in paths],
                   [p.w for p in paths], np.array([p.H for p in paths]).reshape(len(paths), -1),
                   np.array([p.G[iu] for p in paths]).reshape(len(paths), -1), seed=seed)

    def header(self) -> list:
        l = self.dim
        iu = _tri(l)
        return (["z", "c", "tau", "w"] + [f"H{i}" for i in range(l)]
                + [f"G{i}_{j}" for i, j in zip(*iu)])

    def to_csv(self, path) -> None:
        """Columns: z, c, tau, w, H0..H{l-1}, then packed G{i}_{j} for i <= j."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["# b_prime"] + [repr(float(v)) for v in self.b_prime])
            out.writerow(self.header())
            for i in range(self.n):
                out.writerow([repr(float(self.z[i])), repr(float(self.c[i])), int(self.tau[i]),
                              repr(float(self.w[i]))]
                             + [repr(float(v)) for v in self.H[i]]
                             + [repr(float(v)) for v in self.G_packed[i]])

    @classmethod
    def from_csv(cls, path) -> "Sample":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        b_prime = np.array([float(v) for v in rows[0][1:]])
        l = b_prime.shape[0]
        data = np.array([[float(v) for v in r] for r in rows[2:]]).reshape(-1, 4 + l + l * (l + 1) // 2)
        return cls(b_prime, data[:, 0], data[:, 1], data[:, 2].astype(np.int64), data[:, 3],
                   data[:, 4:4 + l], data[:, 4 + l:])


def _stream(seed, index):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    child = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (index,))
    return np.random.Generator(np.random.PCG64(child))


def sample_batch(model: ModelSpec, basis: GaussianBasis, b_prime, n: int, seed,
                 with_stats: bool = True, threads: int = 1) -> Sample:
    """Simulate ``n`` paths under the drift ``r(b_prime)``.

    Paths are split into chunks of ``CHUNK`` with one random stream per
    chunk derived from ``seed``, so results do not depend on ``threads``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    b_prime = np.asarray(b_prime, dtype=float)
    l = basis.dim
    if b_prime.shape != (l,):
        raise ValueError(f"b_prime must have length {l}")
    run = _kernels.path_kernel(model.grad_potential, basis.theta_fn)
    params = basis.params(model.step)
    stop = int(min(model.step_cap, model.horizon_steps))
    horizon = int(min(model.horizon_steps, np.iinfo(np.int64).max))
    p = l * (l + 1) // 2
    tau = np.empty(n, dtype=np.int64)
    label = np.empty(n, dtype=np.int64)
    w = np.empty(n)
    loglp = np.empty(n)
    G = np.empty((n, p) if with_stats else (0, p))
    H = np.empty((n, l) if with_stats else (0, l))

    def work(c):
        lo, hi = c * CHUNK, min(n, (c + 1) * CHUNK)
        gs = G[lo:hi] if with_stats else G
        hs = H[lo:hi] if with_stats else H
        run(_stream(seed, c), model.start, model.domain.lower, model.domain.upper, model.step,
            model.sigma, params, b_prime, stop, horizon, with_stats, tau[lo:hi], label[lo:hi],
            gs, hs, w[lo:hi], loglp[lo:hi])

    chunks = range((n + CHUNK - 1) // CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, chunks))
    else:
        for c in chunks:
            work(c)
    bad = np.flatnonzero(label == _kernels.BLOWUP)
    if bad.size:
        raise NumericalBlowupError(int(tau[bad[0]]), int(bad[0]))
    z = payoff(model, tau, label)
    c = model.step * tau
    if with_stats:
        return Sample(b_prime, z, c, tau, w, H, G, label, seed)
    return Sample(b_prime, z, c, tau, w, label=label, seed=seed, log_lp=loglp)


def rn_condition(sample: Sample, weights) -> bool:
    """Whether ``sum_i 1(Z_i != 0) K_i G_i`` is positive definite."""
    k = np.where(sample.z != 0, np.asarray(weights, dtype=float), 0.0)
    mat = np.einsum("n,nij->ij", k, sample.G)
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.linalg.eigvalsh(mat) > 1e-14 * max(1.0, np.abs(mat).max())))
