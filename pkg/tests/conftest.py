import numpy as np
import pytest

from adaptis.letgs import Sample


def synthetic_sample(rng, n=12, l=3, b_prime=None, max_steps=6, zero_frac=0.25, scale=0.5):
    """LETGS sample built from random tilting rows and innovations.

    Each path has a few steps with rows ``Lambda_k`` of length ``l`` and
    innovations ``eta_k = xi_k + Lambda_k b'``, accumulated exactly as the
    sampler does.
    """
    b_prime = np.zeros(l) if b_prime is None else np.asarray(b_prime, dtype=float)
    iu = np.triu_indices(l)
    G, H, w, tau = [], [], [], []
    for _ in range(n):
        t = int(rng.integers(1, max_steps + 1))
        lam = scale * rng.standard_normal((t, l))
        eta = rng.standard_normal(t) + lam @ b_prime
        g = 0.5 * lam.T @ lam
        G.append(g[iu])
        H.append(-(eta @ lam))
        w.append(float(eta @ eta))
        tau.append(t)
    z = rng.uniform(0.2, 2.0, n) * (rng.uniform(size=n) >= zero_frac)
    if not z.any():
        z[0] = 1.0
    c = 0.01 * np.array(tau, dtype=float) + rng.uniform(0.0, 0.05, n)
    return Sample(b_prime, z, c, tau, w, np.array(H), np.array(G))


def manual_sample(z, G, H, b_prime=None, c=None, w=None):
    """Sample from explicit per-path G (l x l) and H arrays."""
    G = np.asarray(G, dtype=float)
    n, l = G.shape[0], G.shape[1]
    iu = np.triu_indices(l)
    b_prime = np.zeros(l) if b_prime is None else b_prime
    c = np.ones(n) if c is None else c
    w = np.zeros(n) if w is None else w
    return Sample(b_prime, z, c, np.ones(n, dtype=int), w, np.asarray(H, dtype=float).reshape(n, l),
                  G[:, iu[0], iu[1]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record_criterion(number, title, ok, detail=""):
    """Store a PASS/FAIL line for the acceptance summary and print it immediately."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
