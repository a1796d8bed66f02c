"""Uniform tensor grids on a box with homogeneous Dirichlet boundary.

Nodal fields are arrays of shape ``grid.shape``; cell fields have shape
``grid.cell_shape``.  Two discrete gradients are provided:

* :func:`gradient_at_cells` -- the cell-centred gradient, i.e. the average of
  the forward differences over the cell edges along each axis;
* :func:`corner_gradients` -- for every cell, the ``2**dim`` one-sided
  gradients built from the edges meeting at each cell corner.  Their mean is
  exactly the cell-centred gradient.

Both come with exact adjoints so energies built on them have exact discrete
gradients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class GridConfigError(ValueError):
    """Invalid grid construction parameters."""

    def __init__(self, message: str, axis: int | None = None):
        self.axis = axis
        if axis is not None:
            message = f"axis {axis}: {message}"
        super().__init__(message)


class ShapeMismatchError(ValueError):
    """A field does not match the grid it is combined with."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh on ``[0, L_1] x ... x [0, L_dim]``."""

    dim: int
    shape: tuple[int, ...]
    extents: tuple[float, ...]
    spacing: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "spacing", tuple(e / (n - 1) for e, n in zip(self.extents, self.shape))
        )

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.shape)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, e, n) for e, n in zip(self.extents, self.shape)]

    def node_coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``cell_shape + (dim,)``."""
        mids = [0.5 * (a[1:] + a[:-1]) for a in self.axes()]
        return np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)

    def node_weights(self) -> np.ndarray:
        """Tensor trapezoid weights (half weight on each end of every axis)."""
        w = np.ones(())
        for h, n in zip(self.spacing, self.shape):
            wk = np.full(n, h)
            wk[0] = wk[-1] = 0.5 * h
            w = np.multiply.outer(w, wk)
        return w

    def zeros(self) -> "GridFunction":
        return GridFunction(np.zeros(self.shape), self)


def build_grid(dim: int, shape: Sequence[int], extents: Sequence[float]) -> Grid:
    """Validate parameters and build a :class:`Grid`."""
    if dim not in (1, 2, 3):
        raise GridConfigError(f"dim must be 1, 2 or 3, got {dim}")
    shape = tuple(int(n) for n in shape)
    extents = tuple(float(e) for e in extents)
    if len(shape) != dim:
        raise GridConfigError(f"expected {dim} node counts, got {len(shape)}")
    if len(extents) != dim:
        raise GridConfigError(f"expected {dim} extents, got {len(extents)}")
    for k, (n, e) in enumerate(zip(shape, extents)):
        if n < 3:
            raise GridConfigError(f"need at least 3 nodes, got {n}", axis=k)
        if not (e > 0 and np.isfinite(e)):
            raise GridConfigError(f"extent must be positive, got {e}", axis=k)
    return Grid(dim, shape, extents)


@dataclass
class GridFunction:
    """Nodal values of a function vanishing on the boundary of ``grid``."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ShapeMismatchError(
                f"values of shape {self.values.shape} on grid of shape {self.grid.shape}"
            )
        if np.any(self.values[self.grid.boundary_mask] != 0.0):
            raise ValueError("GridFunction must vanish on boundary nodes")

    @classmethod
    def from_function(cls, grid: Grid, f: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """Sample ``f(coords)`` at the nodes and clamp the boundary to zero."""
        values = np.array(f(grid.node_coords()), dtype=float)
        values[grid.boundary_mask] = 0.0
        return cls(values, grid)

    @classmethod
    def clamped(cls, grid: Grid, values: np.ndarray) -> "GridFunction":
        values = np.array(values, dtype=float)
        values[grid.boundary_mask] = 0.0
        return cls(values, grid)

    def copy(self) -> "GridFunction":
        return GridFunction(self.values.copy(), self.grid)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def _check_nodal(f: np.ndarray, grid: Grid) -> None:
    if f.shape[f.ndim - grid.dim:] != grid.shape:
        raise ShapeMismatchError(f"nodal field shape {f.shape} does not end with {grid.shape}")


def _check_cells(f: np.ndarray, grid: Grid) -> None:
    if f.shape[f.ndim - grid.dim:] != grid.cell_shape:
        raise ShapeMismatchError(
            f"cell field shape {f.shape} does not end with {grid.cell_shape}"
        )


def integrate_nodal(f, grid: Grid) -> float | np.ndarray:
    """Trapezoid rule for a nodal field; leading axes are treated as a batch."""
    f = _values(f)
    _check_nodal(f, grid)
    axes = tuple(range(f.ndim - grid.dim, f.ndim))
    return np.sum(f * grid.node_weights(), axis=axes)


def integrate_cells(f, grid: Grid) -> float | np.ndarray:
    """Midpoint rule for a cell field; leading axes are treated as a batch."""
    f = np.asarray(f, dtype=float)
    _check_cells(f, grid)
    axes = tuple(range(f.ndim - grid.dim, f.ndim))
    return np.sum(f, axis=axes) * grid.cell_volume


def split_parts(u: GridFunction) -> tuple[GridFunction, GridFunction]:
    """Return ``(max(u, 0), max(-u, 0))``."""
    return (
        GridFunction(np.maximum(u.values, 0.0), u.grid),
        GridFunction(np.maximum(-u.values, 0.0), u.grid),
    )


# --- discrete gradients --------------------------------------------------


def _edge_differences(u: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Forward differences along each axis, divided by the spacing."""
    off = u.ndim - grid.dim
    return [np.diff(u, axis=off + k) / grid.spacing[k] for k in range(grid.dim)]


def _transverse_slice(ndim: int, dim: int, k: int, offsets: Sequence[int], ncell) -> tuple:
    idx = [slice(None)] * ndim
    off = ndim - dim
    for j in range(dim):
        if j != k:
            idx[off + j] = slice(offsets[j], offsets[j] + ncell[j])
    return tuple(idx)


def corner_offsets(dim: int) -> list[tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=dim))


def gradient_at_cells(u, grid: Grid | None = None) -> np.ndarray:
    """Cell-centred gradient, shape ``batch + cell_shape + (dim,)``.

    Each component is the mean of the forward differences over the
    ``2**(dim-1)`` cell edges parallel to that axis.
    """
    if grid is None:
        grid = u.grid
    u = _values(u)
    _check_nodal(u, grid)
    ncell = grid.cell_shape
    comps = []
    for k, d in enumerate(_edge_differences(u, grid)):
        acc = 0.0
        shifts = [(0, 1) if j != k else (0,) for j in range(grid.dim)]
        combos = list(itertools.product(*shifts))
        for offs in combos:
            acc = acc + d[_transverse_slice(u.ndim, grid.dim, k, offs, ncell)]
        comps.append(acc / len(combos))
    return np.stack(comps, axis=-1)


def gradient_at_cells_adjoint(field: np.ndarray, grid: Grid) -> np.ndarray:
    """Transpose of :func:`gradient_at_cells` (cell vectors -> nodal field)."""
    ncell = grid.cell_shape
    batch = field.shape[: field.ndim - grid.dim - 1]
    out = np.zeros(batch + grid.shape)
    ndim = out.ndim
    for k in range(grid.dim):
        edge_shape = list(batch + grid.shape)
        edge_shape[len(batch) + k] -= 1
        d = np.zeros(edge_shape)
        shifts = [(0, 1) if j != k else (0,) for j in range(grid.dim)]
        combos = list(itertools.product(*shifts))
        for offs in combos:
            d[_transverse_slice(ndim, grid.dim, k, offs, ncell)] += field[..., k] / len(combos)
        _diff_adjoint_into(out, d, len(batch) + k, grid.spacing[k])
    return out


def corner_gradients(u, grid: Grid | None = None) -> np.ndarray:
    """One-sided gradients at every cell corner.

    Returns shape ``batch + (2**dim,) + cell_shape + (dim,)``; corner ``c``
    follows :func:`corner_offsets`.  Component ``k`` at a corner is the
    difference quotient along the axis-``k`` edge of the cell touching that
    corner, so each corner gradient is the gradient of the linear
    interpolant on the corner simplex.
    """
    if grid is None:
        grid = u.grid
    u = _values(u)
    _check_nodal(u, grid)
    ncell = grid.cell_shape
    diffs = _edge_differences(u, grid)
    corners = []
    for offs in corner_offsets(grid.dim):
        comps = [d[_transverse_slice(u.ndim, grid.dim, k, offs, ncell)] for k, d in enumerate(diffs)]
        corners.append(np.stack(comps, axis=-1))
    return np.stack(corners, axis=u.ndim - grid.dim)


def corner_gradients_adjoint(field: np.ndarray, grid: Grid) -> np.ndarray:
    """Transpose of :func:`corner_gradients`."""
    ncell = grid.cell_shape
    nb = field.ndim - grid.dim - 2
    batch = field.shape[:nb]
    out = np.zeros(batch + grid.shape)
    ndim = out.ndim
    for k in range(grid.dim):
        edge_shape = list(batch + grid.shape)
        edge_shape[nb + k] -= 1
        d = np.zeros(edge_shape)
        for c, offs in enumerate(corner_offsets(grid.dim)):
            d[_transverse_slice(ndim, grid.dim, k, offs, ncell)] += np.take(field, c, axis=nb)[..., k]
        _diff_adjoint_into(out, d, nb + k, grid.spacing[k])
    return out


def _diff_adjoint_into(out: np.ndarray, d: np.ndarray, axis: int, h: float) -> None:
    hi = [slice(None)] * out.ndim
    lo = [slice(None)] * out.ndim
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    out[tuple(hi)] += d / h
    out[tuple(lo)] -= d / h


def _axis_factors(n: int, h: float) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """1D difference, left pick and right pick, each ``(n-1) x n``."""
    pick0 = sp.eye(n - 1, n, 0, format="csr")
    pick1 = sp.eye(n - 1, n, 1, format="csr")
    return ((pick1 - pick0) / h).tocsr(), pick0, pick1


def _kron_all(factors) -> sp.csr_matrix:
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return out


def gradient_matrix(grid: Grid, stencil: str = "corner") -> sp.csr_matrix:
    """Sparse matrix of a discrete gradient acting on flattened nodal values.

    ``gradient_matrix(grid, "corner") @ u.ravel()`` equals
    ``corner_gradients(u).ravel()`` and the ``"center"`` variant reproduces
    :func:`gradient_at_cells`.
    """
    facs = [_axis_factors(n, h) for n, h in zip(grid.shape, grid.spacing)]
    d = grid.dim
    if stencil == "corner":
        groups = corner_offsets(d)
    elif stencil == "center":
        groups = [None]
    else:
        raise ValueError(f"unknown stencil {stencil!r}")
    blocks = []
    for offs in groups:
        comps = []
        for k in range(d):
            parts = []
            for j, (diff, p0, p1) in enumerate(facs):
                if j == k:
                    parts.append(diff)
                elif offs is None:
                    parts.append(0.5 * (p0 + p1))
                else:
                    parts.append(p1 if offs[j] else p0)
            comps.append(_kron_all(parts))
        # interleave components so the component axis is the fastest
        stacked = sp.vstack(comps, format="csr")
        nc = grid.cell_count
        order = np.arange(d * nc).reshape(d, nc).T.ravel()
        blocks.append(stacked[order])
    return sp.vstack(blocks, format="csr")


# --- dump format -----------------------------------------------------------


def write_grid_dump(path, u, grid: Grid | None = None, comments: Sequence[str] = ()) -> None:
    """Write nodal values as ``dim shape... extents...`` then one value per line.

    Optional ``comments`` are emitted first as ``#``-prefixed lines.
    """
    if grid is None:
        grid = u.grid
    values = _values(u)
    _check_nodal(values, grid)
    header = " ".join(
        [str(grid.dim)] + [str(n) for n in grid.shape] + [f"{e:.17g}" for e in grid.extents]
    )
    lines = [f"# {c}" for c in comments]
    lines.append(header)
    lines.extend(f"{v:.17g}" for v in values.ravel(order="C"))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_dump(path) -> tuple[Grid, np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    dim = int(head[0])
    shape = [int(s) for s in head[1 : 1 + dim]]
    extents = [float(s) for s in head[1 + dim : 1 + 2 * dim]]
    grid = build_grid(dim, shape, extents)
    values = np.array([float(s) for s in lines[1:]])
    if values.size != grid.node_count:
        raise ShapeMismatchError(f"expected {grid.node_count} values, found {values.size}")
    return grid, values.reshape(grid.shape)
