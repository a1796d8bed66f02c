"""Critical points of the discrete energies.

* :func:`minimize` -- descent to the global minimizer ``u1`` of ``I``;
* :func:`mountain_pass` -- the saddle ``u2`` of the truncated functional ``J``
  between ``0`` and ``u1``;
* :func:`solve` / :func:`scan_lambda` -- orchestration for one or many ``lam``.

Both descent loops are gradient methods with Barzilai-Borwein trial steps and
backtracking (sufficient decrease ``1e-4``, factor ``0.5``).  Gradients are
taken in a lagged-coefficient metric (see :func:`varexp.energy.lagged_metric`)
unless ``preconditioned=False``.  Residual norms are Euclidean norms of the
nodal gradient vectors.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .energy import (
    ProblemParams,
    TruncationData,
    energy_change_I,
    energy_change_J,
    energy_I,
    energy_J,
    lagged_metric,
    relax_dead_core,
    residual_I,
    residual_J,
)
from .grid import Grid, GridFunction
from .operators import HypothesisReport, check_hypotheses

ARMIJO = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60
STALL_ROUNDS = 50
ROUNDOFF = 64 * np.finfo(float).eps


class SolverConfigError(ValueError):
    """Invalid solver input (seed parameters, tolerances, path size)."""


class StagnationError(RuntimeError):
    """The mountain-pass iteration stopped making progress."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# --- functional handles ------------------------------------------------------


@dataclass(frozen=True)
class Functional:
    """Energy handle used by the descent loops.

    ``change(u, v)`` returns ``value(v) - value(u)`` and defaults to the plain
    difference; ``metric(u)`` returns an SPD matrix on interior nodes (or
    ``None`` for the Euclidean gradient); ``relax(u)`` is an optional nodal
    smoother tried after each accepted step.
    """

    value: Callable[[np.ndarray], float]
    residual: Callable[[np.ndarray], np.ndarray]
    grid: Grid
    change: Callable[[np.ndarray, np.ndarray], float] | None = None
    metric: Callable[[np.ndarray], object] | None = None
    relax: Callable[[np.ndarray], np.ndarray] | None = None

    def delta(self, u: np.ndarray, v: np.ndarray) -> float:
        if self.change is not None:
            return self.change(u, v)
        return self.value(v) - self.value(u)


def functional_I(params: ProblemParams, preconditioned: bool = True) -> Functional:
    return Functional(
        value=lambda u: energy_I(u, params),
        residual=lambda u: residual_I(u, params),
        grid=params.grid,
        change=lambda u, v: energy_change_I(u, v, params),
        metric=(lambda u: lagged_metric(u, params)) if preconditioned else None,
        relax=(lambda u: relax_dead_core(u, params)) if preconditioned else None,
    )


def functional_J(params: ProblemParams, trunc: TruncationData, preconditioned: bool = True) -> Functional:
    return Functional(
        value=lambda u: energy_J(u, params, trunc),
        residual=lambda u: residual_J(u, params, trunc),
        grid=params.grid,
        change=lambda u, v: energy_change_J(u, v, params, trunc),
        metric=(lambda u: lagged_metric(u, params, trunc)) if preconditioned else None,
        relax=(lambda u: relax_dead_core(u, params, trunc)) if preconditioned else None,
    )


class _Direction:
    """Gradient direction ``M^-1 r`` on interior nodes (``r`` if no metric)."""

    def __init__(self, functional: Functional, x: np.ndarray):
        self.mask = functional.grid.interior_mask
        self.M = functional.metric(x) if functional.metric is not None else None
        self._lu = splu(self.M) if self.M is not None else None

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return r.copy()
        out = np.zeros_like(r)
        out[self.mask] = self._lu.solve(r[self.mask])
        return out

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        if self.M is None:
            return float(np.vdot(a, b))
        return float(a[self.mask] @ (self.M @ b[self.mask]))


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def _smooth(functional: Functional, y: np.ndarray) -> np.ndarray:
    """Trial point after the optional nodal smoother."""
    return functional.relax(y) if functional.relax is not None else y


# --- minimization --------------------------------------------------------------


@dataclass
class MinimizeReport:
    converged: bool
    iterations: int
    energy: float
    residual_norm: float
    energies: list[float] = field(default_factory=list)
    changes: list[float] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)


def minimize(
    functional: Functional, start, tol: float, max_iter: int
) -> tuple[GridFunction, MinimizeReport]:
    """Descend from ``start`` until the residual norm is at most ``tol``.

    Every accepted step has ``change <= 0`` as measured by
    ``functional.delta``: either the Armijo condition holds, or (once energy
    differences reach roundoff) the energy does not rise while the residual
    drops.  On ``max_iter`` the last, lowest-energy iterate is returned with
    ``converged=False``.
    """
    if not tol > 0:
        raise SolverConfigError(f"tol must be positive, got {tol}")
    grid = functional.grid
    x = _values(start).astype(float, copy=True)
    x[~grid.interior_mask] = 0.0
    F = functional.value(x)
    r = functional.residual(x)
    gn = float(np.linalg.norm(r))
    rep = MinimizeReport(False, 0, F, gn, [F], [], [gn])
    prev = None
    for it in range(max_iter):
        if gn <= tol:
            rep.converged = True
            break
        dirn = _Direction(functional, x)
        d = dirn.solve(r)
        slope = float(np.vdot(r, d))
        alpha = 1.0 if dirn.M is not None else 1.0 / max(gn, 1e-300)
        if prev is not None:
            s, y = x - prev[0], r - prev[1]
            sy = float(np.vdot(s, y))
            if sy > 0:
                alpha = float(np.clip(dirn.inner(s, s) / sy, 1e-10, 1e10))
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            xn = _smooth(functional, x - alpha * d)
            dF = functional.delta(x, xn)
            if dF <= -ARMIJO * alpha * slope:
                rn = functional.residual(xn)
                accepted = True
                break
            if dF <= 0:
                rn = functional.residual(xn)
                if np.linalg.norm(rn) < gn:
                    accepted = True
                    break
            alpha *= BACKTRACK
        if not accepted:
            break
        prev = (x, r)
        x, r = xn, rn
        gn = float(np.linalg.norm(r))
        F = functional.value(x)
        rep.iterations = it + 1
        rep.changes.append(dF)
        rep.energies.append(F)
        rep.residual_norms.append(gn)
    else:
        rep.converged = gn <= tol
    rep.energy, rep.residual_norm = F, gn
    return GridFunction(x, grid), rep


def seed_plateau(grid: Grid, t0: float, margin: float, beta: float | None = None, gamma: float | None = None) -> GridFunction:
    """Plateau ``t0`` on the box shrunk by ``margin`` per side, ramping linearly to 0.

    When ``beta`` and ``gamma`` are given, ``t0`` must satisfy
    ``t0^gamma/gamma > t0^beta/beta`` so the seed can carry negative energy.
    """
    if not t0 > 1:
        raise SolverConfigError(f"t0 must exceed 1, got {t0}")
    if not 0 < margin < 0.5:
        raise SolverConfigError(f"margin must lie in (0, 0.5), got {margin}")
    if beta is not None and gamma is not None:
        if not t0**gamma / gamma > t0**beta / beta:
            raise SolverConfigError(
                f"t0={t0} fails t0^gamma/gamma > t0^beta/beta for beta={beta}, gamma={gamma}"
            )
    x = grid.node_coords()
    ext = np.asarray(grid.extents)
    dist = np.minimum(x, ext - x) / (margin * ext)
    ramp = np.clip(dist.min(axis=-1), 0.0, 1.0)
    return GridFunction.clamped(grid, t0 * ramp)


def smallest_admissible_t0(beta: float, gamma: float) -> int:
    """Smallest integer ``t0 > 1`` with ``t0^gamma/gamma > t0^beta/beta``."""
    t = 2
    while not t**gamma / gamma > t**beta / beta:
        t += 1
    return t


# --- mountain pass --------------------------------------------------------------


@dataclass
class MountainPassReport:
    converged: bool
    iterations: int
    level: float
    residual_norm: float
    initial_path_max: float
    path_energies: np.ndarray
    path_max_index: int
    residual_history: list[float] = field(default_factory=list)
    level_history: list[float] = field(default_factory=list)


def _ray_peak(functional: Functional, v: np.ndarray, t_guess: float) -> float | None:
    """Interior maximiser of ``t -> J(t v)`` nearest ``t_guess``, or ``None``."""

    def slope(t):
        return float(np.vdot(functional.residual(t * v), v))

    grow = 1.25
    if slope(t_guess) > 0:
        lo, hi = t_guess, t_guess * grow
        while slope(hi) > 0:
            lo, hi = hi, hi * grow
            if hi > 1e12 * t_guess:
                return None
    else:
        lo, hi = t_guess / grow, t_guess
        while slope(lo) <= 0:
            lo, hi = lo / grow, lo
            if lo < 1e-12 * t_guess:
                return None
    return brentq(slope, lo, hi, xtol=1e-15 * hi, rtol=1e-15)


def _segment_max(functional: Functional, u1: np.ndarray, m: int) -> tuple[float, float]:
    """``(argmax, max)`` of ``J(s u1)`` over ``s`` in ``[0, 1]``.

    The barrier sits close to 0 when ``u1`` is large, so the scan mixes the
    ``m`` uniform path nodes with a log-spaced sweep before refining.
    """
    ss = np.unique(np.concatenate([np.linspace(0.0, 1.0, m), np.logspace(-9, 0, 240)]))
    vals = np.array([functional.value(s * u1) for s in ss])
    k = int(np.argmax(vals))
    if k == 0 or k == len(ss) - 1 or vals[k] <= 0:
        return float(ss[k]), float(vals[k])
    s = _ray_peak(functional, u1, float(ss[k]))
    if s is None or not 0 < s < 1:
        return float(ss[k]), float(vals[k])
    return s, max(functional.value(s * u1), float(vals[k]))


def _path(u1: np.ndarray, x: np.ndarray, m: int) -> np.ndarray:
    """``m`` nodes on the polyline ``0 -> x -> u1``, endpoints exact."""
    k = m // 2
    first = [t * x for t in np.linspace(0.0, 1.0, k + 1)]
    second = [x + t * (u1 - x) for t in np.linspace(0.0, 1.0, m - k)[1:]]
    pts = np.array(first + second)
    pts[0], pts[-1] = 0.0, u1
    return pts


def mountain_pass(
    functional: Functional, u1, path_nodes: int = 16, tol: float = 1e-6, max_iter: int = 500
) -> tuple[GridFunction, float, MountainPassReport]:
    """Deform the straight path ``0 -> u1`` downhill at its maximum.

    The path is kept as the polyline ``0 -> x -> u1`` through its highest
    point ``x``, which always sits on the ridge: ``x`` maximises ``J`` along
    its own ray.  Each round takes a descent step on ``x`` tangent to that
    ray (same line search as :func:`minimize`) and re-places the result at
    the maximum of its ray, so the path maximum never increases.  Endpoints
    are never moved.  Returns ``(u2, c, report)`` with ``c = J(u2)``.
    """
    if path_nodes < 8:
        raise SolverConfigError(f"path_nodes must be at least 8, got {path_nodes}")
    if not tol > 0:
        raise SolverConfigError(f"tol must be positive, got {tol}")
    grid = functional.grid
    end = _values(u1).astype(float, copy=True)
    j_end = functional.value(end)
    if not j_end < 0:
        raise StagnationError(
            "no mountain geometry: J(u1) is not below J(0) = 0",
            {"J_u1": j_end},
        )
    s0, c0 = _segment_max(functional, end, path_nodes)
    if not 0 < s0 < 1 or not c0 > 0:
        raise StagnationError(
            "path maximum sits at an endpoint; no barrier between 0 and u1",
            {"argmax": s0, "max": c0},
        )
    x = s0 * end
    F = functional.value(x)
    r = functional.residual(x)
    gn = float(np.linalg.norm(r))
    rep = MountainPassReport(False, 0, F, gn, c0, np.empty(0), 0, [gn], [F])
    best_F, best_gn, stall = F, gn, 0

    for it in range(max_iter):
        if gn <= tol:
            rep.converged = True
            break
        dirn = _Direction(functional, x)
        g = dirn.solve(r)
        # tangent part: remove the component along the ray in the metric
        d = g - (float(np.vdot(x, r)) / dirn.inner(x, x)) * x
        slope = float(np.vdot(r, d))
        # energy differences at the saddle reach rounding level before the residual does
        slack = ROUNDOFF * max(1.0, abs(F))
        alpha = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            y = x - alpha * d
            y = np.where((x > 0) & (y < 0), 0.0, y)
            scale = float(np.linalg.norm(y))
            t = _ray_peak(functional, y / scale, scale) if scale > 0 else None
            if t is not None:
                xn = _smooth(functional, t * y / scale)
                dF = functional.delta(x, xn)
                if dF <= -ARMIJO * alpha * slope:
                    rn = functional.residual(xn)
                    accepted = True
                    break
                if dF <= slack:
                    rn = functional.residual(xn)
                    if np.linalg.norm(rn) < gn:
                        accepted = True
                        break
            alpha *= BACKTRACK
        if not accepted:
            raise StagnationError(
                "line search failed at the path maximum",
                {"iteration": it, "level": F, "residual": gn},
            )
        x, r = xn, rn
        gn = float(np.linalg.norm(r))
        F = functional.value(x)
        rep.iterations = it + 1
        rep.level_history.append(F)
        rep.residual_history.append(gn)
        if F < best_F or gn < best_gn:
            best_F, best_gn, stall = min(F, best_F), min(gn, best_gn), 0
        else:
            stall += 1
            if stall >= STALL_ROUNDS:
                raise StagnationError(
                    f"path maximum not reduced in {STALL_ROUNDS} rounds",
                    {"iteration": it, "level": F, "residual": gn},
                )
    else:
        rep.converged = gn <= tol

    pts = _path(end, x, path_nodes)
    rep.path_energies = np.array([functional.value(p) for p in pts])
    rep.path_max_index = int(np.argmax(rep.path_energies))
    rep.level, rep.residual_norm = F, gn
    return GridFunction(x, grid), F, rep


# --- verification -------------------------------------------------------------


@dataclass
class SolutionVerdict:
    residual_norm: float
    min_value: float
    weak_form_worst: float
    residual_ok: bool
    nonnegative_ok: bool
    weak_form_ok: bool

    @property
    def passed(self) -> bool:
        return self.residual_ok and self.nonnegative_ok and self.weak_form_ok


def verify_solution(u, params: ProblemParams, tol: float, seed: int = 0, n_tests: int = 10) -> SolutionVerdict:
    """Check a candidate weak solution of the boundary value problem.

    (i) ``|residual_I| <= tol``; (ii) ``min u >= -tol``; (iii)
    ``|<residual, phi>| <= tol |phi|`` for ``n_tests`` random test functions
    vanishing on the boundary.
    """
    v = _values(u)
    r = residual_I(v, params)
    rn = float(np.linalg.norm(r))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_tests):
        phi = rng.standard_normal(v.shape)
        phi[~params.interior] = 0.0
        worst = max(worst, abs(float(np.vdot(r, phi))) / float(np.linalg.norm(phi)))
    mn = float(v.min())
    return SolutionVerdict(rn, mn, worst, rn <= tol, mn >= -tol, worst <= tol)


# --- orchestration ---------------------------------------------------------------

PLATEAU_MARGINS = (0.125, 0.25, 0.375)
DISTINCT_RTOL = 1e-3
STATUSES = ("two_solutions", "below_threshold", "stagnation")


@dataclass
class SolveReport:
    lam: float
    u1: GridFunction
    I_u1: float
    residual_norm_u1: float
    u2: GridFunction | None
    I_u2: float
    mountain_pass_level_c: float
    residual_norm_u2: float
    ordering_violation: float
    iterations: dict[str, int]
    theorem_compliant: bool
    hypothesis_report: HypothesisReport | None
    status: str
    message: str = ""
    multiplicity: int = 1
    initial_path_max: float = float("nan")
    verdict_u1: SolutionVerdict | None = None
    verdict_u2: SolutionVerdict | None = None

    @property
    def two_solutions(self) -> bool:
        return self.status == "two_solutions"


def plateau_candidates(params: ProblemParams, t_max: float = 2.0**16) -> list[GridFunction]:
    """Admissible plateau seeds, lowest ``I`` first (ties keep generation order)."""
    seeds = []
    t0 = float(smallest_admissible_t0(params.beta, params.gamma))
    while t0 <= t_max:
        for m in PLATEAU_MARGINS:
            seeds.append(seed_plateau(params.grid, t0, m, params.beta, params.gamma))
        t0 *= 2.0
    energies = [energy_I(s, params) for s in seeds]
    order = np.argsort(energies, kind="stable")
    return [seeds[i] for i in order]


def _ordering_violation(u1: np.ndarray, u2: np.ndarray) -> float:
    return float(max(np.max(np.maximum(0.0, u2 - u1)), np.max(np.maximum(0.0, -u2))))


def solve(
    params: ProblemParams,
    tol: float = 1e-6,
    max_iter: int = 500,
    path_nodes: int = 16,
    seed: int = 0,
    n_starts: int = 3,
    hypothesis_report: HypothesisReport | None = None,
    hypothesis_samples: int = 10_000,
    preconditioned: bool = True,
) -> SolveReport:
    """Find ``u1`` (global minimizer) and, when it is nontrivial, ``u2`` (mountain pass).

    ``u1`` is the lowest-energy result of descents from ``u = 0`` and from the
    ``n_starts`` best plateau seeds.  Minimizers within ``1e-10`` (relative)
    of the best energy whose sup-norm distance from ``u1`` exceeds
    ``DISTINCT_RTOL * max(1, |u1|_inf)`` are counted in ``multiplicity``.
    """
    if hypothesis_report is None and hypothesis_samples > 0:
        hypothesis_report = check_hypotheses(params.operator, params.p, params.grid, hypothesis_samples, seed)
    fI = functional_I(params, preconditioned)
    starts = [params.grid.zeros()] + plateau_candidates(params)[:n_starts]
    results = [minimize(fI, s, tol, max_iter) for s in starts]
    k = min(range(len(results)), key=lambda i: results[i][1].energy)
    u1, rep1 = results[k]
    scale = max(1.0, abs(rep1.energy))
    distinct = [
        u
        for u, rp in results
        if abs(rp.energy - rep1.energy) <= 1e-10 * scale
        and np.max(np.abs(u.values - u1.values)) > DISTINCT_RTOL * max(1.0, np.max(np.abs(u1.values)))
    ]
    iters = {"u1": rep1.iterations, "u2": 0}

    def report(status, message, u2=None, c=float("nan"), rn2=float("nan"), order=float("nan"), **kw):
        return SolveReport(
            params.lam, u1, rep1.energy, rep1.residual_norm, u2,
            energy_I(u2, params) if u2 is not None else float("nan"),
            c, rn2, order, iters, params.theorem_compliant, hypothesis_report,
            status, message, 1 + len(distinct), **kw,
        )

    v1 = verify_solution(u1, params, tol, seed)
    if not rep1.converged:
        return report("stagnation", "minimizer did not converge", verdict_u1=v1)
    if np.linalg.norm(u1.values) < 1e-8 or not rep1.energy < -tol:
        return report("below_threshold", "only the trivial minimizer was found", verdict_u1=v1)

    trunc = TruncationData(GridFunction(np.maximum(u1.values, 0.0), params.grid))
    fJ = functional_J(params, trunc, preconditioned)
    try:
        u2, c, rep2 = mountain_pass(fJ, trunc.u1, path_nodes, tol, max_iter)
    except StagnationError as exc:
        return report("stagnation", f"mountain pass: {exc}", verdict_u1=v1)
    iters["u2"] = rep2.iterations
    v2 = verify_solution(u2, params, tol, seed + 1)
    order = _ordering_violation(u1.values, u2.values)
    rn2 = float(np.linalg.norm(residual_I(u2, params)))
    kw = dict(u2=u2, c=c, rn2=rn2, order=order, initial_path_max=rep2.initial_path_max, verdict_u1=v1, verdict_u2=v2)
    if not rep2.converged:
        return report("stagnation", "mountain pass did not converge", **kw)
    i2 = energy_I(u2, params)
    if not (v1.passed and v2.passed and order <= 1e-6 and i2 > 0 > rep1.energy):
        return report("stagnation", "second critical point failed verification", **kw)
    return report("two_solutions", "", **kw)


@dataclass
class ScanResult:
    rows: list[SolveReport]
    lambda_star_estimate: float | None
    bracket: tuple[float, float] | None
    concavity_violations: list[tuple[float, float, float]]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("VAREXP_THREADS", "1")))
    except ValueError:
        return 1


def concavity_violations(lams: Sequence[float], values: Sequence[float], rtol: float = 1e-8) -> list[tuple[float, float, float]]:
    """Consecutive triples where ``values`` lies below its chord.

    For ``l1 < l2 < l3`` concavity requires ``v2 >= ((l3-l2) v1 + (l2-l1) v3)/(l3-l1)``;
    at a midpoint this is the familiar ``v2 >= (v1 + v3)/2``.
    """
    bad = []
    for (l1, v1), (l2, v2), (l3, v3) in zip(
        zip(lams, values), zip(lams[1:], values[1:]), zip(lams[2:], values[2:])
    ):
        chord = ((l3 - l2) * v1 + (l2 - l1) * v3) / (l3 - l1)
        if v2 < chord - rtol * max(1.0, abs(v1), abs(v2), abs(v3)):
            bad.append((l1, l2, l3))
    return bad


def _solve_row(args):
    params, lam, kw = args
    return solve(params.with_lambda(lam), **kw)


def scan_lambda(
    base_params: ProblemParams,
    lambdas: Sequence[float],
    workers: int | None = None,
    **solve_kw,
) -> ScanResult:
    """Solve for each ``lam`` and bracket the threshold past which ``min I < 0``.

    ``lambdas`` must be ascending and nonnegative with at least one positive
    entry.  Rows are independent and run on up to ``workers`` processes
    (default from ``VAREXP_THREADS``).
    """
    lams = [float(v) for v in lambdas]
    if not lams or any(b <= a for a, b in zip(lams, lams[1:])):
        raise SolverConfigError("lambda grid must be strictly ascending")
    if lams[0] < 0 or lams[-1] <= 0:
        raise SolverConfigError("lambda grid must be nonnegative with a positive entry")
    tol = solve_kw.get("tol", 1e-6)
    if solve_kw.get("hypothesis_report") is None and solve_kw.get("hypothesis_samples", 10_000) > 0:
        solve_kw["hypothesis_report"] = check_hypotheses(
            base_params.operator, base_params.p, base_params.grid,
            solve_kw.get("hypothesis_samples", 10_000), solve_kw.get("seed", 0),
        )
    n = min(workers or _threads(), len(lams))
    jobs = [(base_params, lam, solve_kw) for lam in lams]
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_solve_row, jobs))
    else:
        rows = [_solve_row(j) for j in jobs]
    neg = [i for i, r in enumerate(rows) if r.I_u1 < -tol]
    star = bracket = None
    if neg:
        i = neg[0]
        star = rows[i].lam
        bracket = (rows[i - 1].lam if i > 0 else 0.0, star)
    bad = concavity_violations(lams, [r.I_u1 for r in rows])
    return ScanResult(rows, star, bracket, bad)
