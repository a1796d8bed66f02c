"""Run configuration: flat ``key = value`` files with dotted section keys.

Example::

    grid.dim = 3
    grid.shape = 9, 9, 9
    grid.extents = 1, 1, 1
    exponent.family = affine
    exponent.direction = 0
    exponent.lo = 2.0
    exponent.hi = 2.4
    problem.operator = plaplace
    problem.beta = 1.3
    problem.gamma = 1.7
    problem.lambda_grid = 50, 100, 200, 400, 800

Lists are comma or whitespace separated; ``#`` starts a comment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import ParameterError, ProblemParams, theorem_compliance
from .grid import Grid, GridConfigError, build_grid
from .lebesgue import ExponentDomainError, ExponentField
from .operators import MODELS, OperatorModel, OperatorValidityWarning


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


KEYS = {
    "grid.dim", "grid.shape", "grid.extents",
    "exponent.family", "exponent.direction", "exponent.lo", "exponent.hi",
    "exponent.value", "exponent.center", "exponent.values", "exponent.file",
    "problem.operator", "problem.beta", "problem.gamma", "problem.lambda", "problem.lambda_grid",
    "solver.tol", "solver.max_iter", "solver.path_nodes", "solver.seed", "solver.stencil",
    "solver.n_starts", "solver.hypothesis_samples",
    "output.dir",
}


@dataclass
class GridSpec:
    dim: int
    shape: tuple[int, ...]
    extents: tuple[float, ...]


@dataclass
class ExponentSpec:
    family: str
    params: dict = field(default_factory=dict)


@dataclass
class ProblemSpec:
    operator: str = "plaplace"
    beta: float | None = None
    gamma: float | None = None
    lam: float | None = None
    lambda_grid: tuple[float, ...] | None = None


@dataclass
class SolverSpec:
    tol: float | None = None
    max_iter: int = 500
    path_nodes: int = 16
    seed: int = 0
    stencil: str = "corner"
    n_starts: int = 3
    hypothesis_samples: int = 10_000


@dataclass
class RunConfig:
    grid: GridSpec
    exponent: ExponentSpec
    problem: ProblemSpec
    solver: SolverSpec
    output_dir: str = "."
    entries: dict[str, str] = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def tol(self) -> float:
        """Configured tolerance, else 1e-8 in 1D/2D and 1e-6 in 3D."""
        if self.solver.tol is not None:
            return self.solver.tol
        return 1e-8 if self.grid.dim < 3 else 1e-6

    def build_grid(self) -> Grid:
        return build_grid(self.grid.dim, self.grid.shape, self.grid.extents)

    def build_exponent(self, grid: Grid) -> ExponentField:
        fam, prm = self.exponent.family, self.exponent.params
        try:
            if fam == "constant":
                return ExponentField.constant(grid, _need(prm, "value", fam))
            if fam == "affine":
                direction = prm.get("direction", 0)
                return ExponentField.affine(grid, direction, _need(prm, "lo", fam), _need(prm, "hi", fam))
            if fam == "radial":
                center = prm.get("center", [0.5 * e for e in grid.extents])
                return ExponentField.radial(grid, center, _need(prm, "lo", fam), _need(prm, "hi", fam))
            if fam == "tabulated":
                values = self._table(grid)
                return ExponentField.tabulated(grid, values)
        except ExponentDomainError as exc:
            raise ConfigError(f"exponent: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"exponent: {exc}") from exc
        raise ConfigError(f"unknown exponent family {fam!r}")

    def _table(self, grid: Grid) -> np.ndarray:
        prm = self.exponent.params
        if "values" in prm:
            vals = np.asarray(prm["values"], dtype=float)
        elif "file" in prm:
            path = Path(prm["file"])
            if not path.is_absolute():
                path = self.base_dir / path
            try:
                vals = np.loadtxt(path, comments="#", delimiter=None, ndmin=1).ravel()
            except OSError as exc:
                raise ConfigError(f"cannot read exponent table {path}: {exc}") from exc
        else:
            raise ConfigError("tabulated exponent needs exponent.values or exponent.file")
        if vals.size != grid.node_count:
            raise ConfigError(f"exponent table has {vals.size} values, grid has {grid.node_count} nodes")
        return vals

    def build_operator(self, p: ExponentField) -> tuple[OperatorModel, list[str]]:
        name = self.problem.operator
        if name not in MODELS:
            raise ConfigError(f"unknown operator {name!r}; choose from {sorted(MODELS)}")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", OperatorValidityWarning)
            model = MODELS[name](p)
        return model, [str(w.message) for w in caught]

    def build_params(self, lam: float | None = None) -> ProblemParams:
        grid = self.build_grid()
        p = self.build_exponent(grid)
        model, _ = self.build_operator(p)
        pr = self.problem
        if pr.beta is None or pr.gamma is None:
            raise ConfigError("problem.beta and problem.gamma are required")
        if lam is None:
            lam = pr.lam if pr.lam is not None else (pr.lambda_grid[0] if pr.lambda_grid else None)
        if lam is None:
            raise ConfigError("problem.lambda or problem.lambda_grid is required")
        try:
            return ProblemParams(float(lam), pr.beta, pr.gamma, model, p, grid, self.solver.stencil)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def compliance(self) -> bool:
        grid = self.build_grid()
        return theorem_compliance(self.build_exponent(grid), grid.dim)

    def echo_lines(self) -> list[str]:
        """Parsed configuration and compliance verdict, for output headers."""
        lines = [f"{k} = {v}" for k, v in sorted(self.entries.items())]
        try:
            verdict = "true" if self.compliance() else "false"
        except ConfigError:
            verdict = "unknown"
        lines.append(f"theorem_compliant = {verdict}")
        return lines


def _need(prm: dict, key: str, family: str):
    if key not in prm:
        raise ConfigError(f"exponent family {family!r} needs exponent.{key}")
    return prm[key]


def _floats(text: str) -> list[float]:
    parts = text.replace(",", " ").split()
    try:
        return [float(s) for s in parts]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    out = []
    for v in _floats(text):
        if v != int(v):
            raise ConfigError(f"expected integers, got {text!r}")
        out.append(int(v))
    return out


def _scalar(text: str, key: str) -> float:
    vals = _floats(text)
    if len(vals) != 1:
        raise ConfigError(f"{key} expects one number, got {text!r}")
    return vals[0]


def parse_entries(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        entries[key] = value
    return entries


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    e = parse_entries(text)
    if "grid.dim" not in e:
        raise ConfigError("grid.dim is required")
    dim = int(_scalar(e["grid.dim"], "grid.dim"))
    shape = _ints(e.get("grid.shape", "9"))
    extents = _floats(e.get("grid.extents", "1"))
    if len(shape) == 1:
        shape = shape * dim
    if len(extents) == 1:
        extents = extents * dim
    try:
        build_grid(dim, shape, extents)
    except GridConfigError as exc:
        raise ConfigError(f"grid: {exc}") from exc

    prm: dict = {}
    for k in ("lo", "hi", "value"):
        if f"exponent.{k}" in e:
            prm[k] = _scalar(e[f"exponent.{k}"], f"exponent.{k}")
    if "exponent.direction" in e:
        d = _floats(e["exponent.direction"])
        prm["direction"] = int(d[0]) if len(d) == 1 else d
    if "exponent.center" in e:
        prm["center"] = _floats(e["exponent.center"])
    if "exponent.values" in e:
        prm["values"] = _floats(e["exponent.values"])
    if "exponent.file" in e:
        prm["file"] = e["exponent.file"]
    exponent = ExponentSpec(e.get("exponent.family", "constant"), prm)

    problem = ProblemSpec(operator=e.get("problem.operator", "plaplace"))
    if "problem.beta" in e:
        problem.beta = _scalar(e["problem.beta"], "problem.beta")
    if "problem.gamma" in e:
        problem.gamma = _scalar(e["problem.gamma"], "problem.gamma")
    if "problem.lambda" in e:
        problem.lam = _scalar(e["problem.lambda"], "problem.lambda")
    if "problem.lambda_grid" in e:
        problem.lambda_grid = tuple(_floats(e["problem.lambda_grid"]))

    solver = SolverSpec()
    if "solver.tol" in e:
        solver.tol = _scalar(e["solver.tol"], "solver.tol")
    for key in ("max_iter", "path_nodes", "seed", "n_starts", "hypothesis_samples"):
        if f"solver.{key}" in e:
            setattr(solver, key, _ints(e[f"solver.{key}"])[0])
    if "solver.stencil" in e:
        solver.stencil = e["solver.stencil"]
    return RunConfig(
        GridSpec(dim, tuple(shape), tuple(extents)), exponent, problem, solver,
        e.get("output.dir", "."), e, Path(base_dir),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
