"""Two nonnegative solutions of a variable-exponent quasilinear Dirichlet problem.

Modules
-------
grid
    Tensor grids, nodal functions, discrete gradients and the dump format.
lebesgue
    Exponent fields, modulars, Luxemburg norms and inequality checks.
operators
    p-Laplacian and mean-curvature operator models, hypothesis sampling.
energy
    The energies ``I`` and ``J``, their residuals and the lagged metric.
solver
    Minimizer, mountain-pass solver, verification and lambda scans.
config, cli
    ``key = value`` run files and the ``varexp`` command.
"""

from .energy import (
    ParameterError,
    ProblemParams,
    TruncationData,
    energy_I,
    energy_J,
    lambda1_estimate,
    residual_I,
    residual_J,
    theorem_compliance,
    truncation_g,
    truncation_G,
)
from .grid import Grid, GridFunction, build_grid, read_grid_dump, write_grid_dump
from .lebesgue import ExponentField, luxemburg_norm, modular
from .operators import MODELS, check_hypotheses, mean_curvature_model, plaplace_model
from .solver import (
    SolveReport,
    StagnationError,
    minimize,
    mountain_pass,
    scan_lambda,
    solve,
    verify_solution,
)

__version__ = "0.1.0"

__all__ = [
    "ExponentField", "Grid", "GridFunction", "MODELS", "ParameterError", "ProblemParams",
    "SolveReport", "StagnationError", "TruncationData", "build_grid", "check_hypotheses",
    "energy_I", "energy_J", "lambda1_estimate", "luxemburg_norm", "mean_curvature_model",
    "minimize", "modular", "mountain_pass", "plaplace_model", "read_grid_dump", "residual_I",
    "residual_J", "scan_lambda", "solve", "theorem_compliance", "truncation_G", "truncation_g",
    "verify_solution", "write_grid_dump",
]
