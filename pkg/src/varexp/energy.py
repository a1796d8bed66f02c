"""Discrete energies I and J, the truncated reaction, and their exact gradients.

The operator part ``Lambda(u) = int A(x, grad u)`` is integrated cell by cell
with the exponent frozen at the cell centre.  With the default ``"corner"``
stencil every cell contributes the mean of ``A`` over its ``2**dim`` corner
gradients; the ``"center"`` stencil evaluates ``A`` once at the cell-centred
gradient.  Reaction terms use nodal values and trapezoid weights directly, so
``residual_*`` are exact gradients of ``energy_*`` with respect to nodal
values (boundary entries zero).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import (
    Grid,
    GridFunction,
    corner_gradients,
    corner_gradients_adjoint,
    gradient_at_cells,
    gradient_at_cells_adjoint,
    gradient_matrix,
)
from .lebesgue import ExponentField, weighted_luxemburg, weighted_modular
from .operators import OperatorModel

STENCILS = ("corner", "center")


class ParameterError(ValueError):
    """Problem parameters violate ``1 < beta < gamma < p-``."""


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def pos_power(t, e):
    """``max(t, 0)**e`` evaluated as ``exp(e log t)``, zero for ``t <= 0``."""
    t = np.asarray(t, dtype=float)
    pos = t > 0
    with np.errstate(divide="ignore"):
        return np.where(pos, np.exp(e * np.log(np.where(pos, t, 1.0))), 0.0)


def theorem_compliance(p: ExponentField, dim: int) -> bool:
    """Whether ``p+ < min(N, N p- / (N - p-))`` with ``N = dim``."""
    pm = p.p_minus
    crit = dim * pm / (dim - pm) if pm < dim else np.inf
    return bool(p.p_plus < min(dim, crit))


@dataclass(frozen=True)
class ProblemParams:
    lam: float
    beta: float
    gamma: float
    operator: OperatorModel
    p: ExponentField
    grid: Grid
    stencil: str = "corner"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ParameterError(f"lambda must be nonnegative, got {self.lam}")
        if not (1.0 < self.beta < self.gamma < self.p.p_minus):
            raise ParameterError(
                f"need 1 < beta < gamma < p- ; got beta={self.beta}, gamma={self.gamma}, "
                f"p-={self.p.p_minus}"
            )
        if self.p.node_values.shape != self.grid.shape:
            raise ParameterError("exponent field was sampled on a different grid")
        if self.stencil not in STENCILS:
            raise ParameterError(f"unknown stencil {self.stencil!r}")

    @property
    def theorem_compliant(self) -> bool:
        return theorem_compliance(self.p, self.grid.dim)

    def with_lambda(self, lam: float) -> "ProblemParams":
        return replace(self, lam=float(lam))

    @cached_property
    def node_weights(self) -> np.ndarray:
        return self.grid.node_weights()

    @cached_property
    def interior(self) -> np.ndarray:
        return self.grid.interior_mask


# --- operator part ----------------------------------------------------------


def discrete_gradient(u, params: ProblemParams) -> np.ndarray:
    """Gradient samples used by the operator quadrature for ``params.stencil``."""
    if params.stencil == "corner":
        return corner_gradients(_values(u), params.grid)
    return gradient_at_cells(_values(u), params.grid)


def _gradient_weights(params: ProblemParams) -> tuple[np.ndarray, np.ndarray]:
    """Exponent and quadrature weight broadcast over the gradient samples."""
    g = params.grid
    if params.stencil == "corner":
        nc = 2**g.dim
        pe = np.broadcast_to(params.p.cell_values, (nc,) + g.cell_shape)
        return pe, np.full((nc,) + g.cell_shape, g.cell_volume / nc)
    return params.p.cell_values, np.full(g.cell_shape, g.cell_volume)


def operator_energy(u, params: ProblemParams) -> float:
    """``Lambda(u) = int A(x, grad u) dx``."""
    pe, w = _gradient_weights(params)
    return float(np.sum(w * params.operator.A(discrete_gradient(u, params), pe)))


def operator_residual(u, params: ProblemParams) -> np.ndarray:
    pe, w = _gradient_weights(params)
    flux = params.operator.a(discrete_gradient(u, params), pe) * w[..., None]
    if params.stencil == "corner":
        r = corner_gradients_adjoint(flux, params.grid)
    else:
        r = gradient_at_cells_adjoint(flux, params.grid)
    r[~params.interior] = 0.0
    return r


def gradient_modular(u, params: ProblemParams) -> float:
    """``int |grad u|^p(x) dx`` with the operator quadrature."""
    pe, w = _gradient_weights(params)
    return float(weighted_modular(np.linalg.norm(discrete_gradient(u, params), axis=-1), pe, w))


def gradient_norm(u, params: ProblemParams) -> float:
    """The norm on the energy space, ``|grad u|_p(x)`` (Luxemburg)."""
    pe, w = _gradient_weights(params)
    return weighted_luxemburg(np.linalg.norm(discrete_gradient(u, params), axis=-1), pe, w)


# --- I ----------------------------------------------------------------------


def reaction_integrals(u, params: ProblemParams) -> tuple[float, float]:
    """``(int u+^gamma, int u+^beta)``; ``I`` is affine in lambda given these."""
    v = _values(u)
    w = params.node_weights
    return (
        float(np.sum(w * pos_power(v, params.gamma))),
        float(np.sum(w * pos_power(v, params.beta))),
    )


def energy_I(u, params: ProblemParams) -> float:
    lam, b, g = params.lam, params.beta, params.gamma
    pg, pb = reaction_integrals(u, params)
    return operator_energy(u, params) - lam / g * pg + lam / b * pb


def residual_I(u, params: ProblemParams) -> np.ndarray:
    """Gradient of the discrete ``I`` with respect to nodal values."""
    v = _values(u)
    lam = params.lam
    react = pos_power(v, params.gamma - 1.0) - pos_power(v, params.beta - 1.0)
    r = operator_residual(v, params) - lam * params.node_weights * react
    r[~params.interior] = 0.0
    return r


# --- truncation and J -------------------------------------------------------


@dataclass(frozen=True)
class TruncationData:
    u1: GridFunction

    def __post_init__(self):
        if np.min(self.u1.values) < -1e-10:
            raise ValueError(f"truncation level must be nonnegative, min {self.u1.values.min():.3g}")

    @cached_property
    def level(self) -> np.ndarray:
        return np.maximum(self.u1.values, 0.0)


def _check_level(u1) -> np.ndarray:
    u1 = np.asarray(u1, dtype=float)
    if np.any(u1 < 0):
        raise ValueError("truncation level u1 must be nonnegative")
    return u1


def truncation_g(t, u1, beta: float, gamma: float):
    """Reaction ``t^(g-1) - t^(b-1)`` frozen above ``u1`` and zero below 0."""
    u1 = _check_level(u1)
    t = np.asarray(t, dtype=float)
    s = np.minimum(t, u1)
    out = pos_power(s, gamma - 1.0) - pos_power(s, beta - 1.0)
    return out if out.ndim else float(out)


def truncation_G(t, u1, beta: float, gamma: float):
    """Primitive ``G(t) = int_0^t g(s) ds`` in closed form."""
    u1 = _check_level(u1)
    t = np.asarray(t, dtype=float)
    s = np.minimum(t, u1)
    base = pos_power(s, gamma) / gamma - pos_power(s, beta) / beta
    gu1 = pos_power(u1, gamma - 1.0) - pos_power(u1, beta - 1.0)
    out = base + np.maximum(t - u1, 0.0) * gu1
    return out if out.ndim else float(out)


def energy_J(u, params: ProblemParams, trunc: TruncationData) -> float:
    v = _values(u)
    big_g = truncation_G(v, trunc.level, params.beta, params.gamma)
    return operator_energy(v, params) - params.lam * float(np.sum(params.node_weights * big_g))


def residual_J(u, params: ProblemParams, trunc: TruncationData) -> np.ndarray:
    v = _values(u)
    g = truncation_g(v, trunc.level, params.beta, params.gamma)
    r = operator_residual(v, params) - params.lam * params.node_weights * g
    r[~params.interior] = 0.0
    return r


# --- accurate energy changes ---------------------------------------------------

# 4-point Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X, _GL_W = 0.5 * (_GL_X + 1.0), 0.5 * _GL_W

# below this relative change a sample is integrated along the segment
_NEAR = 1e-2


def _operator_change(u: np.ndarray, v: np.ndarray, params: ProblemParams) -> float:
    pe, w = _gradient_weights(params)
    pe = np.broadcast_to(pe, w.shape)
    xu, xv = discrete_gradient(u, params), discrete_gradient(v, params)
    # the gradient of the difference, not the difference of gradients
    dx = discrete_gradient(v - u, params)
    op = params.operator
    change = op.A(xv, pe) - op.A(xu, pe)
    near = np.linalg.norm(dx, axis=-1) <= _NEAR * np.linalg.norm(xu, axis=-1)
    if np.any(near):
        x0, d, pn = xu[near], dx[near], pe[near]
        acc = np.zeros(len(pn))
        for s, ws in zip(_GL_X, _GL_W):
            acc += ws * np.einsum("ij,ij->i", op.a(x0 + s * d, pn), d)
        change[near] = acc
    return float(np.sum(w * change))


def _power_change(u: np.ndarray, v: np.ndarray, e: float) -> np.ndarray:
    """Nodewise ``v+^e/e - u+^e/e``."""
    change = pos_power(v, e) / e - pos_power(u, e) / e
    d = v - u
    near = (u > 0) & (v > 0) & (np.abs(d) <= _NEAR * u)
    if np.any(near):
        acc = np.zeros(int(near.sum()))
        for s, ws in zip(_GL_X, _GL_W):
            acc += ws * pos_power(u[near] + s * d[near], e - 1.0)
        change[near] = acc * d[near]
    return change


def energy_change_I(u, v, params: ProblemParams) -> float:
    """``I(v) - I(u)`` without the cancellation of subtracting two energies.

    Samples whose change is small relative to their value are integrated
    along the segment from ``u`` to ``v``, so the result keeps full relative
    accuracy when ``v`` is a small step away from ``u``.
    """
    u, v = _values(u), _values(v)
    react = params.lam * (_power_change(u, v, params.beta) - _power_change(u, v, params.gamma))
    return _operator_change(u, v, params) + float(np.sum(params.node_weights * react))


def energy_change_J(u, v, params: ProblemParams, trunc: TruncationData) -> float:
    """``J(v) - J(u)``, accurate in the same sense as :func:`energy_change_I`."""
    u, v = _values(u), _values(v)
    lev, b, g = trunc.level, params.beta, params.gamma
    dG = truncation_G(v, lev, b, g) - truncation_G(u, lev, b, g)
    d = v - u
    inside = (u > 0) & (v > 0) & (u <= lev) & (v <= lev) & (np.abs(d) <= _NEAR * u)
    if np.any(inside):
        acc = np.zeros(int(inside.sum()))
        for s, ws in zip(_GL_X, _GL_W):
            acc += ws * truncation_g(u[inside] + s * d[inside], lev[inside], b, g)
        dG[inside] = acc * d[inside]
    above = (u >= lev) & (v >= lev)
    dG[above] = d[above] * truncation_g(lev[above], lev[above], b, g)
    return _operator_change(u, v, params) - params.lam * float(np.sum(params.node_weights * dG))


# --- lagged-coefficient metric ----------------------------------------------------


@lru_cache(maxsize=16)
def interior_gradient_matrix(grid: Grid, stencil: str) -> sp.csr_matrix:
    """:func:`gradient_matrix` restricted to interior columns."""
    cols = np.flatnonzero(grid.interior_mask.ravel())
    return gradient_matrix(grid, stencil)[:, cols].tocsr()


def _secant_modulus(xi: np.ndarray, pe: np.ndarray, op: OperatorModel) -> np.ndarray:
    """``|a(xi)| / |xi|``, with ``|xi|`` floored to keep the weight positive."""
    mag = np.linalg.norm(xi, axis=-1)
    top = float(mag.max()) if mag.size else 0.0
    floor = 1e-6 * top if top > 0 else 1.0
    m = np.maximum(mag, floor)
    probe = np.zeros(m.shape + (xi.shape[-1],))
    probe[..., 0] = m
    return np.linalg.norm(op.a(probe, pe), axis=-1) / m


def lagged_metric(u, params: ProblemParams, trunc: TruncationData | None = None, reaction: bool = True):
    """Symmetric positive definite matrix on interior nodes, coefficients frozen at ``u``.

    The operator part is ``G^T diag(w |a(grad u)|/|grad u|) G``, the weighted
    stiffness of the fixed-point (Kacanov) linearisation.  The reaction part
    adds the secant modulus ``lam w u^(beta-2)`` of the absorption term at
    nodes with ``u > 0`` (and below the truncation level, if any), which is
    what keeps steps well scaled where ``u`` is nearly zero.
    """
    v = _values(u)
    pe, w = _gradient_weights(params)
    pe = np.broadcast_to(pe, w.shape)
    G = interior_gradient_matrix(params.grid, params.stencil)
    omega = w * _secant_modulus(discrete_gradient(v, params), pe, params.operator)
    weights = np.repeat(omega.ravel(), params.grid.dim)
    M = (G.T @ sp.diags(weights) @ G).tocsc()
    if not reaction:
        return M
    ui = v[params.interior]
    active = ui > 0
    if trunc is not None:
        active &= ui < trunc.level[params.interior]
    s = np.maximum(np.where(active, ui, 1.0), 1e-12)
    mod = np.where(active, params.lam * params.node_weights[params.interior] * s ** (params.beta - 2.0), 0.0)
    return (M + sp.diags(mod)).tocsc()


# --- dead core relaxation ----------------------------------------------------------


def relax_dead_core(u, params: ProblemParams, trunc: TruncationData | None = None, threshold: float = 1e-8):
    """Solve the nodal equation exactly at nodes where ``|u|`` is negligible.

    Near ``u = 0`` the absorption ``lam u^(beta-1)`` has unbounded slope, so
    the critical value at a node bordering a dead core is tiny (often below
    1e-15) and gradient steps cannot resolve it.  With the operator part
    linearised by its lagged diagonal ``D`` about ``t = 0``, each such node
    solves ``L0 + D t + lam w (t^(beta-1) - t^(gamma-1)) = 0``; for ``L0 >= 0``
    the root ``-L0 / D`` lies where the reaction vanishes.  Only nodes whose
    root stays below ``threshold * max|u|`` are updated.
    """
    v = _values(u).copy()
    interior = params.interior
    scale = float(np.max(np.abs(v)))
    if scale == 0.0 or params.lam == 0.0:
        return v
    tiny = threshold * scale
    ui = v[interior]
    cand = np.abs(ui) <= tiny
    if not np.any(cand):
        return v
    D = lagged_metric(v, params, reaction=False).diagonal()[cand]
    base = operator_residual(v, params)[interior][cand] - D * ui[cand]
    lw = params.lam * params.node_weights[interior][cand]
    b1, g1 = params.beta - 1.0, params.gamma - 1.0
    neg = base >= 0
    # positive roots: bisection in log t, bracketed around the leading-order root
    log_t0 = (np.log(np.maximum(-base, 1e-300)) - np.log(lw)) / b1
    lo, hi = log_t0 - 8.0, log_t0 + 8.0

    def f(logt):
        t = np.exp(logt)
        return base + D * t + lw * (t**b1 - t**g1)

    good = ~neg & (f(lo) < 0) & (f(hi) > 0)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        up = f(mid) > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    root = np.where(neg, -base / D, np.exp(0.5 * (lo + hi)))
    ok = (neg | good) & (np.abs(root) <= tiny)
    if trunc is not None:
        ok &= root <= trunc.level[interior][cand]
    sub = ui[cand]
    sub[ok] = root[ok]
    ui[cand] = sub
    v[interior] = ui
    return v


# --- embedding constant -------------------------------------------------------


def rayleigh_ratio(u, params: ProblemParams) -> float:
    """``int (1/p)|grad u|^p / int |u|^p-`` (operator-independent)."""
    pe, w = _gradient_weights(params)
    mag = np.linalg.norm(discrete_gradient(u, params), axis=-1)
    num = float(np.sum(w * pos_power(mag, pe) / pe))
    den = float(np.sum(params.node_weights * pos_power(np.abs(_values(u)), params.p.p_minus)))
    return num / den


def _rayleigh_and_grad(v: np.ndarray, params: ProblemParams) -> tuple[float, np.ndarray]:
    pe, w = _gradient_weights(params)
    grads = discrete_gradient(v, params)
    sq = np.einsum("...i,...i->...", grads, grads)
    num = float(np.sum(w * pos_power(sq, 0.5 * pe) / pe))
    dnum_field = (w * pos_power(sq, 0.5 * (pe - 2.0)))[..., None] * grads
    if params.stencil == "corner":
        dnum = corner_gradients_adjoint(dnum_field, params.grid)
    else:
        dnum = gradient_at_cells_adjoint(dnum_field, params.grid)
    pm = params.p.p_minus
    nw = params.node_weights
    den = float(np.sum(nw * pos_power(np.abs(v), pm)))
    dden = pm * nw * pos_power(np.abs(v), pm - 1.0) * np.sign(v)
    grad = dnum / den - num * dden / den**2
    grad[~params.interior] = 0.0
    return num / den, grad


def lambda1_estimate(
    p: ExponentField,
    grid: Grid,
    n_starts: int = 4,
    seed: int = 0,
    max_iter: int = 3000,
    stencil: str = "corner",
    return_minimizer: bool = False,
):
    """Upper estimate of ``inf_{||u|| > 1} int (1/p)|grad u|^p / int |u|^p-``.

    The ratio grows along rays once ``||u|| >= 1``, so the search runs on the
    sphere ``||u|| = 1`` by projected gradient descent (rescaling after every
    step) from a smooth bump and ``n_starts - 1`` random starts.
    """
    from .operators import plaplace_model  # ratio is operator-free; any model will do

    with np.testing.suppress_warnings() as sup:
        sup.filter(Warning)
        op = plaplace_model(p)
    params = _RatioParams(p, grid, stencil, op)
    rng = np.random.default_rng(seed)
    coords = grid.node_coords()
    bump = np.prod(np.sin(np.pi * coords / np.asarray(grid.extents)), axis=-1)
    starts = [bump] + [rng.uniform(0.0, 1.0, grid.shape) for _ in range(max(0, n_starts - 1))]

    best, best_u = np.inf, None
    for s in starts:
        v = s.copy()
        v[~grid.interior_mask] = 0.0
        v /= gradient_norm(v, params)
        val, g = _rayleigh_and_grad(v, params)
        step = 1e-3 / max(np.linalg.norm(g), 1e-300)
        prev = None
        for _ in range(max_iter):
            if prev is not None:
                sv, yv = (v - prev[0]).ravel(), (g - prev[1]).ravel()
                sy = sv @ yv
                if sy > 0:
                    step = (sv @ sv) / sy
            # backtrack until the normalised trial lowers the ratio
            for _ in range(60):
                trial = v - step * g
                trial /= gradient_norm(trial, params)
                tval, tg = _rayleigh_and_grad(trial, params)
                if tval < val:
                    break
                step *= 0.5
            else:
                break
            prev = (v, g)
            v, g = trial, tg
            done = val - tval <= 1e-15 * abs(val)
            val = tval
            if done:
                break
        if val < best:
            best, best_u = val, v
    if return_minimizer:
        return best, GridFunction(best_u, grid)
    return best


@dataclass(frozen=True)
class _RatioParams:
    p: ExponentField
    grid: Grid
    stencil: str
    operator: OperatorModel

    @cached_property
    def node_weights(self):
        return self.grid.node_weights()

    @cached_property
    def interior(self):
        return self.grid.interior_mask
