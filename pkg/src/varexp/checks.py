"""Invariant suites shared by ``varexp selftest`` and the acceptance tests.

Each suite returns a small result object with a ``passed`` flag and the
measured quantity, so callers can print or assert as they see fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .energy import (
    ProblemParams,
    TruncationData,
    energy_I,
    energy_J,
    residual_I,
    residual_J,
    truncation_g,
    truncation_G,
)
from .grid import Grid, GridFunction, build_grid
from .lebesgue import (
    ExponentField,
    check_holder,
    check_modular_relations,
    luxemburg_norm,
    weighted_luxemburg,
)
from .operators import MODELS, OperatorModel, check_hypotheses, plaplace_flux, plaplace_potential


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: dict[str, float] = field(default_factory=dict)

    def summary(self) -> str:
        body = ", ".join(f"{k}={v:.3g}" for k, v in self.measured.items())
        return f"{self.name:<12} {'PASS' if self.passed else 'FAIL'}  {body}"


def acceptance_params(operator: str = "plaplace", lam: float = 400.0, n: int = 9, dim: int = 3) -> ProblemParams:
    """Unit box, ``p`` affine in ``[2.0, 2.4]`` along the first axis, beta=1.3, gamma=1.7."""
    grid = build_grid(dim, [n] * dim, [1.0] * dim)
    p = ExponentField.affine(grid, 0, 2.0, 2.4)
    return ProblemParams(lam, 1.3, 1.7, MODELS[operator](p), p, grid)


# --- gradients -----------------------------------------------------------------


def _kink_free(rng: np.random.Generator, shape, lo: float, hi: float) -> np.ndarray:
    """Random values with ``lo <= |u| <= hi`` and random signs."""
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(lo, hi, shape)


def _fd_gradient(energy, v: np.ndarray, interior: np.ndarray, step: float) -> np.ndarray:
    g = np.zeros_like(v)
    flat, gflat = v.ravel(), g.ravel()
    for i in np.flatnonzero(interior.ravel()):
        x0 = flat[i]
        flat[i] = x0 + step
        ep = energy(v)
        flat[i] = x0 - step
        em = energy(v)
        flat[i] = x0
        gflat[i] = (ep - em) / (2.0 * step)
    return g


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def gradient_suite(
    params: ProblemParams, n_states: int = 20, step: float = 1e-5, seed: int = 0, sign: float = 1.0
) -> SuiteResult:
    """``residual_I``/``residual_J`` against central differences on random states.

    States keep every interior value at least 0.05 away from the kinks of the
    reaction (zero and the truncation level), so the difference quotient is
    smooth.  ``sign`` exists only to let tests inject a sign error.
    """
    rng = np.random.default_rng(seed)
    grid = params.grid
    inner = params.interior
    worst_i = worst_j = 0.0
    for _ in range(n_states):
        u = np.where(inner, _kink_free(rng, grid.shape, 0.05, 1.0), 0.0)
        fd = _fd_gradient(lambda w: energy_I(w, params), u, inner, step)
        worst_i = max(worst_i, _rel(sign * residual_I(u, params), fd))

        level = np.where(inner, rng.uniform(0.2, 1.0, grid.shape), 0.0)
        trunc = TruncationData(GridFunction(level, grid))
        ratio = rng.choice([-1.0, 1.0], grid.shape) * rng.uniform(0.1, 0.8, grid.shape)
        ratio = np.where(rng.random(grid.shape) < 0.3, 1.0 + rng.uniform(0.1, 0.5, grid.shape), ratio)
        w = np.where(inner, ratio * level, 0.0)
        fd = _fd_gradient(lambda x: energy_J(x, params, trunc), w, inner, step)
        worst_j = max(worst_j, _rel(sign * residual_J(w, params, trunc), fd))
    ok = worst_i < 1e-6 and worst_j < 1e-6
    return SuiteResult("gradients", ok, {"rel_err_I": worst_i, "rel_err_J": worst_j})


# --- variable-exponent spaces ----------------------------------------------------


def _random_fields(rng: np.random.Generator, n: int, shape) -> np.ndarray:
    scale = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), n))
    return rng.standard_normal((n,) + tuple(shape)) * scale.reshape((n,) + (1,) * len(shape))


def space_suite(n_samples: int = 10_000, seed: int = 0, grid: Grid | None = None) -> SuiteResult:
    """Homogeneity, constant-exponent collapse, Hoelder and modular sandwiches.

    All four checks run on ``n_samples`` random nodal fields (batched), with
    magnitudes spread over six decades so every sandwich branch is visited.
    """
    rng = np.random.default_rng(seed)
    grid = grid or build_grid(2, [6, 6], [1.0, 1.5])
    p = ExponentField.radial(grid, [0.3, 0.9], 1.4, 3.1)
    w = grid.node_weights()
    u = _random_fields(rng, n_samples, grid.shape)
    v = _random_fields(rng, n_samples, grid.shape)

    norm_u = luxemburg_norm(u, p, grid)
    alpha = np.exp(rng.uniform(-3.0, 3.0, n_samples)) * rng.choice([-1.0, 1.0], n_samples)
    scaled = luxemburg_norm(alpha.reshape(-1, 1, 1) * u, p, grid)
    homog = np.abs(scaled - np.abs(alpha) * norm_u) / (np.abs(alpha) * norm_u)
    homog_bad = int(np.sum(homog > 1e-10))

    q = rng.uniform(1.1, 4.0, n_samples)
    mag = np.abs(u)
    expo = np.broadcast_to(q.reshape(-1, 1, 1), mag.shape)
    lux = np.array([weighted_luxemburg(mag[i], expo[i], w) for i in range(n_samples)])
    classical = np.sum(w * mag ** q.reshape(-1, 1, 1), axis=(1, 2)) ** (1.0 / q)
    collapse = float(np.max(np.abs(lux - classical) / classical))

    holder = check_holder(u, v, p, grid)
    holder_bad = int(np.sum(~np.asarray(holder.holds)))
    sandwich = check_modular_relations(u, p, grid)
    sandwich_bad = int(np.sum(~np.asarray(sandwich.holds)))

    ok = homog_bad == 0 and collapse < 1e-10 and holder_bad == 0 and sandwich_bad == 0
    return SuiteResult(
        "varexp",
        ok,
        {
            "homogeneity_violations": homog_bad,
            "collapse_err": collapse,
            "holder_violations": holder_bad,
            "sandwich_violations": sandwich_bad,
        },
    )


# --- operator hypotheses -------------------------------------------------------------


def clarkson_floor(p_plus: float) -> float:
    return 1.0 / (p_plus * 2.0**p_plus)


def operator_suite(n_samples: int = 10_000, seed: int = 0) -> SuiteResult:
    """(A1)-(A5) for both models with ``p`` in ``[2, 2.5]``, plus the Clarkson floor on ``k``."""
    grid = build_grid(2, [9, 9], [1.0, 1.0])
    p = ExponentField.affine(grid, 0, 2.0, 2.5)
    measured = {}
    ok = True
    for name, make in MODELS.items():
        rep = check_hypotheses(make(p), p, grid, n_samples, seed)
        ok &= rep.all_pass
        measured[f"{name}_k"] = rep.k
        if name == "plaplace":
            floor = 0.9 * clarkson_floor(p.p_plus)
            ok &= rep.k >= floor
            measured["k_floor"] = floor
    return SuiteResult("operators", bool(ok), measured)


def broken_model() -> OperatorModel:
    """p-Laplacian shifted by one, so ``A(x, 0) = 1``; a negative control for (A1)."""
    return OperatorModel("broken", lambda xi, p: 1.0 + plaplace_potential(xi, p), plaplace_flux)


# --- truncation ------------------------------------------------------------------------


def truncation_suite(params: ProblemParams, u1: GridFunction, n: int = 100, seed: int = 0) -> SuiteResult:
    """``J = I`` on the order interval ``[0, u1]`` and ``G`` against quadrature of ``g``."""
    rng = np.random.default_rng(seed)
    trunc = TruncationData(u1)
    level = trunc.level
    worst_id = 0.0
    for _ in range(n):
        u = rng.random(level.shape) * level
        i, j = energy_I(u, params), energy_J(u, params, trunc)
        worst_id = max(worst_id, abs(i - j) / max(abs(i), 1e-300))

    b, g = params.beta, params.gamma
    worst_q = 0.0
    for _ in range(n):
        lv = rng.uniform(0.0, 3.0)
        t = rng.uniform(-1.0, 4.0)
        ref, _ = quad(lambda s: truncation_g(s, lv, b, g), 0.0, t, points=[0.0, lv] if 0 < lv < t else None,
                      epsabs=1e-13, epsrel=1e-13, limit=200)
        worst_q = max(worst_q, abs(truncation_G(t, lv, b, g) - ref))
    ok = worst_id <= 1e-12 and worst_q <= 1e-8
    return SuiteResult("truncation", ok, {"identity_rel": worst_id, "quad_err": worst_q})
