"""Operator pairs ``(A, a)`` with ``a = dA/dxi`` and a sampling verifier.

Evaluators are vectorised: ``potential(xi, p)`` and ``flux(xi, p)`` take
gradients ``xi`` of shape ``(..., dim)`` and exponents ``p`` broadcastable to
``xi.shape[:-1]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid
from .lebesgue import ExponentField

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


class OperatorValidityWarning(UserWarning):
    """The exponent leaves the range the operator model was stated for."""


@dataclass(frozen=True)
class OperatorModel:
    name: str
    potential: Evaluator
    flux: Evaluator
    requires_p_at_least: float = 2.0
    warnings: tuple[str, ...] = ()

    def A(self, xi, p):
        return self.potential(np.asarray(xi, dtype=float), np.asarray(p, dtype=float))

    def a(self, xi, p):
        return self.flux(np.asarray(xi, dtype=float), np.asarray(p, dtype=float))


def _sqnorm(xi: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", xi, xi)


def _pow(base: np.ndarray, expo: np.ndarray) -> np.ndarray:
    """``base**expo`` for base >= 0 with ``0**e = 0`` for every ``e``."""
    with np.errstate(divide="ignore"):
        pos = base > 0
        return np.where(pos, np.exp(expo * np.log(np.where(pos, base, 1.0))), 0.0)


def plaplace_potential(xi, p):
    return _pow(_sqnorm(xi), 0.5 * p) / p


def plaplace_flux(xi, p):
    return _pow(_sqnorm(xi), 0.5 * (p - 2.0))[..., None] * xi


def mean_curvature_potential(xi, p):
    return np.expm1(0.5 * p * np.log1p(_sqnorm(xi))) / p


def mean_curvature_flux(xi, p):
    return np.exp(0.5 * (p - 2.0) * np.log1p(_sqnorm(xi)))[..., None] * xi


def _validity(name: str, p: ExponentField) -> tuple[str, ...]:
    if p.p_minus < 2.0:
        msg = f"{name}: exponent drops to {p.p_minus:.6g} < 2, outside the model's stated range"
        warnings.warn(msg, OperatorValidityWarning, stacklevel=3)
        return (msg,)
    return ()


def plaplace_model(p: ExponentField) -> OperatorModel:
    """``A = |xi|^p / p``, ``a = |xi|^(p-2) xi`` (continuous extension ``a(0) = 0``)."""
    return OperatorModel("plaplace", plaplace_potential, plaplace_flux, 2.0, _validity("plaplace", p))


def mean_curvature_model(p: ExponentField) -> OperatorModel:
    """``A = ((1+|xi|^2)^(p/2) - 1) / p``, ``a = (1+|xi|^2)^((p-2)/2) xi``."""
    return OperatorModel(
        "mean_curvature",
        mean_curvature_potential,
        mean_curvature_flux,
        2.0,
        _validity("mean_curvature", p),
    )


MODELS = {"plaplace": plaplace_model, "mean_curvature": mean_curvature_model}


@dataclass
class HypothesisReport:
    verdicts: dict[str, bool]
    c1: float
    k: float
    worst_violation: dict[str, float]
    n_samples: int
    flux_consistency: float = float("nan")
    notes: list[str] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(self.verdicts.values())


def _draw(rng: np.random.Generator, n: int, dim: int, lo=1e-3, hi=1e3) -> np.ndarray:
    dirs = rng.standard_normal((n, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mags = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    return dirs * mags[:, None]


def flux_consistency_error(
    model: OperatorModel, p: ExponentField, dim: int, n_samples: int = 1000, seed: int = 0
) -> float:
    """Max relative gap between ``a`` and central differences of ``A``.

    Gradients are drawn with ``|xi|`` log-uniform in ``[0.1, 10]``.
    """
    rng = np.random.default_rng(seed)
    xi = _draw(rng, n_samples, dim, 0.1, 10.0)
    pv = rng.choice(p.cell_values.ravel(), n_samples)
    a = model.a(xi, pv)
    fd = np.empty_like(xi)
    for j in range(dim):
        h = 1e-6 * np.maximum(1.0, np.abs(xi[:, j]))
        e = np.zeros(dim)
        e[j] = 1.0
        fd[:, j] = (model.A(xi + h[:, None] * e, pv) - model.A(xi - h[:, None] * e, pv)) / (2 * h)
    return float(np.max(np.linalg.norm(fd - a, axis=1) / np.linalg.norm(a, axis=1)))


def check_hypotheses(
    model: OperatorModel, p: ExponentField, grid: Grid, n_samples: int = 10_000, seed: int = 0
) -> HypothesisReport:
    """Falsification test of the five structural hypotheses by sampling.

    Draws ``n_samples`` triples (exponent sample, xi, psi) with magnitudes
    log-uniform in ``[1e-3, 1e3]``.  The constants ``c1`` (growth) and ``k``
    (uniform convexity) are reported as empirical extrema, not proofs.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    dim = grid.dim
    samples = np.concatenate([p.node_values.ravel(), p.cell_values.ravel()])
    pv = rng.choice(samples, n_samples)
    xi = _draw(rng, n_samples, dim)
    psi = _draw(rng, n_samples, dim)
    # a slice of coincident pairs exercises the equality case
    n_eq = max(1, n_samples // 100)
    psi[:n_eq] = xi[:n_eq]

    verdicts: dict[str, bool] = {}
    worst: dict[str, float] = {}
    notes: list[str] = list(model.warnings)

    # (A1) exactly, at every sampled exponent
    a0 = model.A(np.zeros((samples.size, dim)), samples)
    verdicts["A1"] = bool(np.all(a0 == 0.0))
    worst["A1"] = float(np.max(np.abs(a0)))

    # (A2) growth bound
    a_xi, a_psi = model.a(xi, pv), model.a(psi, pv)
    nxi = np.linalg.norm(xi, axis=1)
    ratio = np.linalg.norm(a_xi, axis=1) / (1.0 + nxi ** (pv - 1.0))
    c1 = float(np.max(ratio))
    verdicts["A2"] = bool(np.isfinite(c1) and c1 > 0)
    worst["A2"] = c1

    # (A3) strict monotonicity
    diff = xi - psi
    ndiff = np.linalg.norm(diff, axis=1)
    inner = np.einsum("ij,ij->i", a_xi - a_psi, diff)
    scale = (np.linalg.norm(a_xi, axis=1) + np.linalg.norm(a_psi, axis=1)) * ndiff
    neg = np.maximum(0.0, -inner - 1e-12 * scale)
    flat = inner < 1e-12 * (1.0 + ndiff)
    iff_broken = flat & (ndiff >= 1e-8)
    verdicts["A3"] = bool(not np.any(neg > 1e-12) and not np.any(iff_broken))
    worst["A3"] = float(max(neg.max(), ndiff[iff_broken].max() if iff_broken.any() else 0.0))

    # (A4) uniform convexity, estimate k over distinct pairs
    distinct = ndiff > 0
    gap = (
        0.5 * model.A(xi, pv)
        + 0.5 * model.A(psi, pv)
        - model.A(0.5 * (xi + psi), pv)
    )
    kr = gap[distinct] / ndiff[distinct] ** pv[distinct]
    k = float(np.min(kr)) if kr.size else float("nan")
    verdicts["A4"] = bool(np.isfinite(k) and k > 0)
    worst["A4"] = float(max(0.0, -k)) if np.isfinite(k) else float("inf")

    # (A5) |xi|^p <= a.xi <= p A
    axi = np.einsum("ij,ij->i", a_xi, xi)
    pa = pv * model.A(xi, pv)
    low = nxi**pv
    tol = 1e-12 * np.maximum(1.0, np.abs(pa))
    v5 = np.maximum(low - axi - tol, axi - pa - tol)
    verdicts["A5"] = bool(np.all(v5 <= 0))
    worst["A5"] = float(max(0.0, v5.max()))

    if p.p_minus >= 2.0:
        fc = flux_consistency_error(model, p, dim, min(n_samples, 1000), seed + 1)
    else:
        fc = float("nan")
        notes.append("flux consistency check skipped for p < 2")

    return HypothesisReport(verdicts, c1, k, worst, n_samples, fc, notes)
