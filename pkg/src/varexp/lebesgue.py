"""Variable exponent Lebesgue spaces on a grid: modulars and Luxemburg norms.

Functions accept either nodal fields (integrated with trapezoid weights and
the exponent sampled at nodes) or cell fields (midpoint rule, exponent at
cell centres).  Vector-valued cell fields ``cell_shape + (dim,)`` are reduced
to their Euclidean magnitude.  Extra leading axes are treated as a batch, so
many functions can be measured in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Grid, GridFunction, ShapeMismatchError

BISECTION_MAX_ITER = 200
NORM_RESIDUAL_TOL = 1e-13


class ExponentDomainError(ValueError):
    """An exponent sample is not strictly greater than one."""


@dataclass(frozen=True)
class ExponentField:
    """Exponent ``p(x)`` frozen at the nodes and cell centres of a grid."""

    family: str
    params: dict
    node_values: np.ndarray = field(repr=False)
    cell_values: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.node_values, self.cell_values):
            arr.setflags(write=False)
        if not (np.all(np.isfinite(self.node_values)) and np.all(np.isfinite(self.cell_values))):
            raise ExponentDomainError("exponent samples must be finite")
        if np.any(self.node_values <= 1.0) or np.any(self.cell_values <= 1.0):
            bad = min(self.node_values.min(), self.cell_values.min())
            raise ExponentDomainError(f"exponent must exceed 1 everywhere, found {bad:.17g}")

    @property
    def p_minus(self) -> float:
        return float(min(self.node_values.min(), self.cell_values.min()))

    @property
    def p_plus(self) -> float:
        return float(max(self.node_values.max(), self.cell_values.max()))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ExponentField":
        return cls(
            "constant",
            {"value": float(c)},
            np.full(grid.shape, float(c)),
            np.full(grid.cell_shape, float(c)),
        )

    @classmethod
    def affine(cls, grid: Grid, direction, lo: float, hi: float) -> "ExponentField":
        """Exponent ranging linearly from ``lo`` to ``hi`` along ``direction``.

        ``direction`` is an axis index or a vector; the extreme values are
        attained at the box corners minimising/maximising ``direction . x``.
        """
        d = _direction(direction, grid.dim)
        corners = np.array(np.meshgrid(*[[0.0, e] for e in grid.extents], indexing="ij"))
        proj = np.tensordot(d, corners.reshape(grid.dim, -1), axes=1)
        s_min, s_max = proj.min(), proj.max()

        def f(x):
            s = (x @ d - s_min) / (s_max - s_min)
            return lo + (hi - lo) * np.clip(s, 0.0, 1.0)

        return cls(
            "affine",
            {"direction": d.tolist(), "lo": float(lo), "hi": float(hi)},
            f(grid.node_coords()),
            f(grid.cell_centers()),
        )

    @classmethod
    def radial(cls, grid: Grid, center: Sequence[float], lo: float, hi: float) -> "ExponentField":
        """``lo`` at ``center`` growing linearly in distance to ``hi`` at the farthest corner."""
        c = np.asarray(center, dtype=float)
        corners = np.array(np.meshgrid(*[[0.0, e] for e in grid.extents], indexing="ij"))
        rmax = np.linalg.norm(corners.reshape(grid.dim, -1).T - c, axis=1).max()

        def f(x):
            return lo + (hi - lo) * np.linalg.norm(x - c, axis=-1) / rmax

        return cls(
            "radial",
            {"center": c.tolist(), "lo": float(lo), "hi": float(hi)},
            f(grid.node_coords()),
            f(grid.cell_centers()),
        )

    @classmethod
    def tabulated(cls, grid: Grid, node_values) -> "ExponentField":
        """Nodal table; cell values are the mean of the ``2**dim`` cell corners."""
        nv = np.array(node_values, dtype=float).reshape(grid.shape)
        cv = np.zeros(grid.cell_shape)
        for offs in np.ndindex(*(2,) * grid.dim):
            cv += nv[tuple(slice(o, o + n) for o, n in zip(offs, grid.cell_shape))]
        return cls("tabulated", {}, nv, cv / 2**grid.dim)


def _direction(direction, dim: int) -> np.ndarray:
    if np.ndim(direction) == 0:
        d = np.zeros(dim)
        d[int(direction)] = 1.0
    else:
        d = np.asarray(direction, dtype=float)
        if d.shape != (dim,) or not np.any(d):
            raise ValueError(f"direction must be a nonzero {dim}-vector")
    return d / np.linalg.norm(d)


def conjugate(p: ExponentField) -> ExponentField:
    """Pointwise conjugate exponent ``q = p / (p - 1)``."""
    if np.any(p.node_values <= 1.0) or np.any(p.cell_values <= 1.0):
        raise ExponentDomainError("conjugate needs p > 1 everywhere")
    return ExponentField(
        "conjugate",
        {"of": p.family, **p.params},
        p.node_values / (p.node_values - 1.0),
        p.cell_values / (p.cell_values - 1.0),
    )


# --- modulars ---------------------------------------------------------------


def sample_layout(u, p: ExponentField, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(|u|, exponents, weights)`` for a nodal, cell or cell-vector field."""
    u = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)
    d = grid.dim
    if u.shape[u.ndim - d:] == grid.shape and u.ndim >= d:
        return np.abs(u), p.node_values, grid.node_weights()
    if u.ndim >= d + 1 and u.shape[u.ndim - d - 1:] == grid.cell_shape + (d,):
        mag = np.linalg.norm(u, axis=-1)
        return mag, p.cell_values, np.full(grid.cell_shape, grid.cell_volume)
    if u.shape[u.ndim - d:] == grid.cell_shape:
        return np.abs(u), p.cell_values, np.full(grid.cell_shape, grid.cell_volume)
    raise ShapeMismatchError(
        f"field of shape {u.shape} matches neither nodes {grid.shape} nor cells {grid.cell_shape}"
    )


def weighted_modular(mag: np.ndarray, exponents: np.ndarray, weights: np.ndarray):
    """``sum(weights * mag**exponents)`` over the trailing ``weights.ndim`` axes."""
    with np.errstate(divide="ignore"):
        powered = np.where(mag > 0, np.exp(exponents * np.log(np.where(mag > 0, mag, 1.0))), 0.0)
    axes = tuple(range(mag.ndim - weights.ndim, mag.ndim))
    return np.sum(weights * powered, axis=axes)


def modular(u, p: ExponentField, grid: Grid):
    """Quadrature approximation of ``int |u(x)|^p(x) dx``."""
    return weighted_modular(*sample_layout(u, p, grid))


def weighted_luxemburg(mag: np.ndarray, exponents: np.ndarray, weights: np.ndarray):
    """Luxemburg norm for the weighted discrete modular, by bracketing and bisection.

    Solves ``modular(mag / mu) = 1`` for ``mu``; the map is strictly
    decreasing in ``mu`` for nonzero data.  Batched over leading axes.
    """
    nb = mag.ndim - weights.ndim
    batch = mag.shape[:nb]
    flat = mag.reshape((-1,) + weights.shape)
    axes = tuple(range(1, flat.ndim))
    nonzero = np.any(flat > 0, axis=axes)
    with np.errstate(divide="ignore"):
        logmag = np.where(flat > 0, np.log(np.where(flat > 0, flat, 1.0)), -np.inf)

    def mod(log_mu):
        lm = log_mu.reshape((-1,) + (1,) * weights.ndim)
        return np.sum(weights * np.exp(exponents * (logmag - lm)), axis=axes)

    # initial guess from the mean exponent, then expand by powers of two
    pbar = float(np.mean(exponents))
    rho = np.sum(weights * np.exp(exponents * logmag), axis=axes)
    est = np.where(nonzero, np.log(np.where(nonzero, rho, 1.0)) / pbar, 0.0)
    lo = est - np.log(2.0)
    hi = est + np.log(2.0)
    for _ in range(BISECTION_MAX_ITER):
        m_lo, m_hi = mod(lo), mod(hi)
        bad_lo = nonzero & (m_lo < 1.0)
        bad_hi = nonzero & (m_hi > 1.0)
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo - np.log(2.0) * 2, lo)
        hi = np.where(bad_hi, hi + np.log(2.0) * 2, hi)

    mid = 0.5 * (lo + hi)
    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        m = mod(mid)
        done = ~nonzero | (np.abs(m - 1.0) <= NORM_RESIDUAL_TOL) | (hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid)))
        if np.all(done):
            break
        above = m > 1.0
        lo = np.where(~done & above, mid, lo)
        hi = np.where(~done & ~above, mid, hi)
    norm = np.where(nonzero, np.exp(mid), 0.0)
    return norm.reshape(batch) if batch else float(norm[0])


def luxemburg_norm(u, p: ExponentField, grid: Grid):
    """``inf{mu > 0 : modular(u / mu) <= 1}``; zero for the zero field."""
    return weighted_luxemburg(*sample_layout(u, p, grid))


# --- inequality verifiers ------------------------------------------------------


@dataclass
class HolderVerdict:
    lhs: float
    rhs: float
    holds: bool


def check_holder(u, v, p: ExponentField, grid: Grid) -> HolderVerdict:
    """Compare ``|int u v|`` with ``(1/p- + 1/q-) |u|_p |v|_q``."""
    uu = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)
    vv = v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=float)
    if uu.shape != vv.shape:
        raise ShapeMismatchError(f"{uu.shape} vs {vv.shape}")
    q = conjugate(p)
    mag_u, pe, w = sample_layout(uu, p, grid)
    mag_v, qe, _ = sample_layout(vv, q, grid)
    axes = tuple(range(uu.ndim - w.ndim, uu.ndim))
    lhs = np.abs(np.sum(w * uu * vv, axis=axes))
    rhs = (1.0 / p.p_minus + 1.0 / q.p_minus) * weighted_luxemburg(mag_u, pe, w) * weighted_luxemburg(mag_v, qe, w)
    holds = lhs <= rhs + 1e-12
    if np.ndim(lhs) == 0:
        return HolderVerdict(float(lhs), float(rhs), bool(holds))
    return HolderVerdict(lhs, rhs, holds)


@dataclass
class ModularVerdict:
    norm: float
    modular: float
    lower: float
    upper: float
    branch: str
    holds: bool


def check_modular_relations(u, p: ExponentField, grid: Grid) -> ModularVerdict:
    """Check the norm/modular sandwich for the branch the norm falls in.

    ``norm > 1``: ``norm**p- <= rho <= norm**p+``;
    ``norm < 1``: ``norm**p+ <= rho <= norm**p-``;
    ``norm ~ 1``: ``rho ~ 1``.  Batched over leading axes.
    """
    mag, pe, w = sample_layout(u, p, grid)
    n = np.asarray(weighted_luxemburg(mag, pe, w))
    rho = np.asarray(weighted_modular(mag, pe, w))
    a, b = n ** p.p_minus, n ** p.p_plus
    lower, upper = np.minimum(a, b), np.maximum(a, b)
    near_one = np.abs(n - 1.0) < 1e-9
    slack = 1e-12 * np.maximum(1.0, upper)
    sandwich = (lower - slack <= rho) & (rho <= upper + slack)
    holds = np.where(near_one, np.abs(rho - 1.0) < 1e-6, sandwich)
    branch = np.where(near_one, "unit", np.where(n > 1.0, "above", "below"))
    if n.ndim == 0:
        return ModularVerdict(float(n), float(rho), float(lower), float(upper), str(branch), bool(holds))
    return ModularVerdict(n, rho, lower, upper, branch, holds)
