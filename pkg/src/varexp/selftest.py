"""Fast invariant suite behind ``varexp selftest``.

Sizes are reduced from the acceptance runs so the whole suite finishes in a
few seconds.  ``VAREXP_SELFTEST_FAULT=sign`` flips the sign of the residual
inside the gradient suite; it exists so tests can confirm that a broken
build is reported as a failure.
"""

from __future__ import annotations

import os
import time
from typing import Callable

import numpy as np

from . import checks
from .energy import ProblemParams
from .grid import GridFunction, build_grid
from .lebesgue import ExponentField
from .operators import MODELS
from .solver import solve

FAULT_ENV = "VAREXP_SELFTEST_FAULT"


def _small_params(operator: str, lam: float = 50.0) -> ProblemParams:
    grid = build_grid(2, [7, 6], [1.0, 0.8])
    p = ExponentField.affine(grid, 0, 2.0, 2.4)
    return ProblemParams(lam, 1.3, 1.7, MODELS[operator](p), p, grid)


def _gradients(fault: str | None) -> checks.SuiteResult:
    sign = -1.0 if fault == "sign" else 1.0
    measured, ok = {}, True
    for name in MODELS:
        res = checks.gradient_suite(_small_params(name), n_states=3, sign=sign)
        ok &= res.passed
        measured.update({f"{name}_{k}": v for k, v in res.measured.items()})
    return checks.SuiteResult("gradients", bool(ok), measured)


def _truncation() -> checks.SuiteResult:
    params = _small_params("plaplace")
    u1 = GridFunction.from_function(params.grid, lambda x: 2.0 * np.prod(np.sin(np.pi * x / params.grid.extents), axis=-1))
    return checks.truncation_suite(params, u1, n=50)


def _solver() -> checks.SuiteResult:
    grid = build_grid(1, [33], [1.0])
    p = ExponentField.affine(grid, 0, 2.0, 2.4)
    params = ProblemParams(120.0, 1.3, 1.7, MODELS["plaplace"](p), p, grid)
    rep = solve(params, tol=1e-8, hypothesis_samples=0)
    return checks.SuiteResult(
        "solver",
        rep.two_solutions,
        {"I_u1": rep.I_u1, "I_u2": rep.I_u2, "ordering": rep.ordering_violation},
    )


def suites(fault: str | None = None) -> list[tuple[str, Callable[[], checks.SuiteResult]]]:
    return [
        ("varexp", lambda: checks.space_suite(2_000)),
        ("gradients", lambda: _gradients(fault)),
        ("operators", lambda: checks.operator_suite(10_000)),
        ("truncation", _truncation),
        ("solver", _solver),
    ]


def run(fault: str | None = None, emit: Callable[[str], None] | None = print) -> bool:
    """Run every suite; print one line each.  Returns True iff all pass."""
    if fault is None:
        fault = os.environ.get(FAULT_ENV) or None
    all_ok = True
    for name, fn in suites(fault):
        t0 = time.perf_counter()
        try:
            res = fn()
            line = f"{res.summary()}  ({time.perf_counter() - t0:.1f} s)"
            all_ok &= res.passed
        except Exception as exc:  # a crashing suite is a failing suite
            line = f"{name:<12} FAIL  {type(exc).__name__}: {exc}"
            all_ok = False
        if emit:
            emit(line)
    return bool(all_ok)
