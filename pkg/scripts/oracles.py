"""Independent oracle values that the test-suite freezes.

Each oracle avoids the package's own solver path: dense eigensolves, dense
ratio sampling, adaptive quadrature and scipy's L-BFGS-B.  Run with
``python3 scripts/oracles.py`` and paste the printed values into the tests
if the discretisation ever changes.
"""

import numpy as np
import scipy.linalg as la
from scipy.integrate import quad
from scipy.optimize import minimize as sp_minimize

from varexp import checks
from varexp.energy import energy_I, residual_I, truncation_g


def lambda1_dense(n: int = 65) -> float:
    """Smallest ``0.5 * v'Kv / v'Mv`` for the 1D Laplacian with lumped mass."""
    h = 1.0 / (n - 1)
    m = n - 2
    K = (np.diag(np.full(m, 2.0)) - np.diag(np.ones(m - 1), 1) - np.diag(np.ones(m - 1), -1)) / h
    M = np.eye(m) * h
    return 0.5 * float(la.eigh(K, M, eigvals_only=True)[0])


def clarkson_dense(p: float, n_mag: int = 200, n_ang: int = 181) -> float:
    """Dense-grid minimum of ``(A(x)/2 + A(y)/2 - A((x+y)/2)) / |x-y|^p`` in 2D.

    The ratio is scale invariant, so ``|x| = 1`` and ``y = r (cos t, sin t)``.
    """
    r = np.concatenate([np.logspace(-4, 4, n_mag), [1.0]])
    t = np.linspace(0.0, np.pi, n_ang)
    R, T = np.meshgrid(r, t, indexing="ij")
    x = np.stack([np.ones_like(R), np.zeros_like(R)], -1)
    y = np.stack([R * np.cos(T), R * np.sin(T)], -1)

    def A(z):
        return np.linalg.norm(z, axis=-1) ** p / p

    d = np.linalg.norm(x - y, axis=-1)
    ok = d > 1e-9
    ratio = (0.5 * A(x) + 0.5 * A(y) - A(0.5 * (x + y)))[ok] / d[ok] ** p
    return float(ratio.min())


def G_quadrature(t=3.0, u1=2.0, beta=1.3, gamma=1.7) -> float:
    val, _ = quad(lambda s: truncation_g(s, u1, beta, gamma), 0.0, t, points=[u1], epsabs=1e-14, epsrel=1e-14)
    return val


def multistart_min(lam: float = 400.0, n_starts: int = 16, seed: int = 0) -> float:
    """Lowest ``I`` over L-BFGS-B descents from 16 seeded nonnegative random starts."""
    params = checks.acceptance_params(lam=lam)
    inner = params.interior
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(n_starts):
        scale = np.exp(rng.uniform(np.log(1.0), np.log(200.0)))
        x0 = (rng.uniform(0.0, scale, params.grid.shape) * inner)[inner]

        def fun(z):
            u = np.zeros(params.grid.shape)
            u[inner] = z
            return energy_I(u, params), residual_I(u, params)[inner]

        res = sp_minimize(fun, x0, jac=True, method="L-BFGS-B",
                          options=dict(maxiter=20000, maxfun=40000, gtol=1e-9, ftol=1e-15))
        best = min(best, float(res.fun))
    return best


if __name__ == "__main__":
    print(f"lambda1_dense(65)          = {lambda1_dense(65)!r}")
    print(f"pi^2/2                     = {np.pi**2 / 2!r}")
    print(f"clarkson_dense(2.5)        = {clarkson_dense(2.5)!r}")
    print(f"clarkson_dense(2.0)        = {clarkson_dense(2.0)!r}")
    print(f"clarkson_floor(2.5)        = {checks.clarkson_floor(2.5)!r}")
    print(f"G_quadrature(3, 2)         = {G_quadrature()!r}")
    print(f"multistart_min(400)        = {multistart_min(400.0)!r}")
