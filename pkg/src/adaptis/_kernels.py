"""Compiled path simulation for batches of tilted Euler paths."""
import numpy as np
from numba import njit

TRUNC = -1
HORIZON = -2
BLOWUP = -3

_CACHE = {}


def path_kernel(grad_fn, theta_fn):
    """Return a jitted batch simulator specialised to a potential and a basis.

    ``grad_fn(x, out)`` writes the potential gradient; ``theta_fn(x, t,
    params, out)`` writes the ``(m, l)`` matrix ``sqrt(h) * basis(x, t)``.
    """
    key = (grad_fn, theta_fn)
    if key in _CACHE:
        return _CACHE[key]

    @njit(nogil=True, error_model="numpy")
    def run(gen, x0, lower, upper, h, sigma, params, bp, stop_steps, horizon_steps,
            with_stats, out_tau, out_label, out_G, out_H, out_w, out_loglp):
        n = out_tau.shape[0]
        m = x0.shape[0]
        l = bp.shape[0]
        x = np.empty(m)
        g = np.empty(m)
        eta = np.empty(m)
        lam = np.zeros(m)
        theta = np.zeros((m, l))
        G = np.zeros((l, l))
        H = np.zeros(l)
        tilted = False
        for i in range(l):
            if bp[i] != 0.0:
                tilted = True
        need_theta = l > 0 and (with_stats or tilted)
        sqh = np.sqrt(h)
        for p in range(n):
            for j in range(m):
                x[j] = x0[j]
            G[:, :] = 0.0
            H[:] = 0.0
            w = 0.0
            loglp = 0.0
            k = 0
            label = TRUNC
            while True:
                if k >= stop_steps:
                    label = HORIZON if k == horizon_steps else TRUNC
                    break
                grad_fn(x, g)
                if need_theta:
                    theta_fn(x, k * h, params, theta)
                    for j in range(m):
                        s = 0.0
                        for i in range(l):
                            s += theta[j, i] * bp[i]
                        lam[j] = s
                for j in range(m):
                    eta[j] = gen.standard_normal() + lam[j]
                    w += eta[j] * eta[j]
                    loglp += 0.5 * lam[j] * lam[j] - lam[j] * eta[j]
                if with_stats and l > 0:
                    for i in range(l):
                        s = 0.0
                        for j in range(m):
                            s += eta[j] * theta[j, i]
                        H[i] -= s
                        for i2 in range(i, l):
                            s = 0.0
                            for j in range(m):
                                s += theta[j, i] * theta[j, i2]
                            G[i, i2] += 0.5 * s
                for j in range(m):
                    x[j] = x[j] - h * g[j] + sqh * sigma * eta[j]
                k += 1
                bad = False
                for j in range(m):
                    if not np.isfinite(x[j]):
                        bad = True
                if bad:
                    label = BLOWUP
                    break
                for j in range(m):
                    if x[j] <= lower[j]:
                        label = 2 * j
                        break
                    if x[j] >= upper[j]:
                        label = 2 * j + 1
                        break
                if label >= 0:
                    break
            out_tau[p] = k
            out_label[p] = label
            out_w[p] = w
            out_loglp[p] = loglp
            if with_stats:
                c = 0
                for i in range(l):
                    out_H[p, i] = H[i]
                    for i2 in range(i, l):
                        out_G[p, c] = G[i, i2]
                        c += 1

    _CACHE[key] = run
    return run
