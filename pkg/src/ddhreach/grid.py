"""Rectangular grids, scalar fields, gradients, interpolation, level sets.

Everything downstream (solver, policy, expansion) addresses fields
exclusively through the index/coordinate maps defined here; the row-major
flat layout is a private detail of :class:`ScalarField`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "make_grid",
    "central_gradient",
    "gradient_fields",
    "interpolate",
    "levelset_from_bounds",
    "field_from_function",
    "write_field",
    "read_field",
    "write_field_csv",
]

# Surrogate for "no constraint": large enough to dominate any real margin,
# small enough to stay exactly representable and survive arithmetic.
VACUOUS_MARGIN = 1e9


class GridError(ValueError):
    """Raised for degenerate or inconsistent grid definitions."""


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular discretization of a box in state space.

    Attributes:
        mins, maxs: domain corners, length ``dims``.
        counts: points per axis (each >= 3).
        spacing: derived per-axis step ``(maxs - mins) / (counts - 1)``.
        coords: per-axis coordinate arrays (linspace, endpoints exact).
    """

    mins: np.ndarray
    maxs: np.ndarray
    counts: np.ndarray
    spacing: np.ndarray = field(init=False)
    coords: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "spacing", (self.maxs - self.mins) / (self.counts - 1))
        object.__setattr__(
            self,
            "coords",
            tuple(np.linspace(self.mins[j], self.maxs[j], self.counts[j]) for j in range(self.dims)),
        )

    @property
    def dims(self) -> int:
        return len(self.counts)

    @property
    def num_points(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> tuple:
        return tuple(int(c) for c in self.counts)

    def point(self, index) -> np.ndarray:
        """Coordinates of a multi-index."""
        index = np.asarray(index, dtype=np.intp)
        if index.shape != (self.dims,):
            raise GridError(f"index must have length {self.dims}, got {index.shape}")
        if np.any(index < 0) or np.any(index >= self.counts):
            raise GridError(f"index {index.tolist()} out of bounds for counts {self.counts.tolist()}")
        return np.array([self.coords[j][index[j]] for j in range(self.dims)])

    def all_points(self) -> np.ndarray:
        """All grid points as an (num_points, dims) array in row-major order."""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
            and np.array_equal(self.counts, other.counts)
        )


def make_grid(mins, maxs, counts) -> Grid:
    """Build a grid; rejects degenerate axes and mismatched lengths."""
    mins = np.atleast_1d(np.asarray(mins, dtype=np.float64))
    maxs = np.atleast_1d(np.asarray(maxs, dtype=np.float64))
    counts = np.atleast_1d(np.asarray(counts, dtype=np.intp))
    if not (mins.shape == maxs.shape == counts.shape) or mins.ndim != 1:
        raise GridError(f"mins/maxs/counts length mismatch: {mins.shape}, {maxs.shape}, {counts.shape}")
    if np.any(counts < 3):
        raise GridError(f"each axis needs at least 3 points, got {counts.tolist()}")
    if np.any(maxs <= mins):
        raise GridError(f"degenerate axis: maxs must exceed mins, got {mins.tolist()} vs {maxs.tolist()}")
    return Grid(mins=mins, maxs=maxs, counts=counts)


@dataclass(frozen=True)
class ScalarField:
    """Scalar function sampled on a grid (value fields, level-set margins).

    ``values`` is stored C-ordered with shape ``grid.shape``; immutable
    after construction so fields can be shared read-only across workers.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.size == self.grid.num_points:
            values = values.reshape(self.grid.shape)
        if values.shape != self.grid.shape:
            raise GridError(f"values shape {values.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def field_from_function(grid: Grid, fn) -> ScalarField:
    """Sample ``fn`` on the grid. ``fn`` takes an (M, dims) array of points
    and returns M values (vectorized)."""
    return ScalarField(grid, np.asarray(fn(grid.all_points()), dtype=np.float64))


def central_gradient(field: ScalarField, index) -> np.ndarray:
    """Finite-difference gradient at one grid point.

    Central differences at interior points, first-order one-sided at the
    boundary. Exact for affine fields everywhere.
    """
    grid = field.grid
    index = np.asarray(index, dtype=np.intp)
    if index.shape != (grid.dims,):
        raise GridError(f"index must have length {grid.dims}")
    if np.any(index < 0) or np.any(index >= grid.counts):
        raise GridError(f"index {index.tolist()} out of bounds")
    out = np.empty(grid.dims)
    for j in range(grid.dims):
        h = grid.spacing[j]
        lo = list(index)
        hi = list(index)
        if index[j] == 0:
            hi[j] += 1
            out[j] = (field.values[tuple(hi)] - field.values[tuple(lo)]) / h
        elif index[j] == grid.counts[j] - 1:
            lo[j] -= 1
            out[j] = (field.values[tuple(hi)] - field.values[tuple(lo)]) / h
        else:
            lo[j] -= 1
            hi[j] += 1
            out[j] = (field.values[tuple(hi)] - field.values[tuple(lo)]) / (2.0 * h)
    return out


def gradient_fields(field: ScalarField) -> list:
    """Per-axis gradient of the whole field as new ScalarFields.

    Same stencil as :func:`central_gradient` (np.gradient with first-order
    edges), so pointwise queries and whole-field sweeps agree exactly.
    """
    grid = field.grid
    if grid.dims == 1:
        grads = [np.gradient(field.values, grid.spacing[0], edge_order=1)]
    else:
        grads = np.gradient(field.values, *grid.spacing, edge_order=1)
    return [ScalarField(grid, g) for g in grads]


def interpolate(field: ScalarField, x) -> tuple:
    """Multilinear interpolation at ``x``.

    Returns ``(value, clamped)``. Off-domain queries clamp to the boundary
    and set ``clamped=True`` (rollouts may momentarily exit the grid; the
    caller decides how conservatively to treat that). Exact at grid points
    and for multilinear functions.
    """
    grid = field.grid
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.dims,):
        raise GridError(f"query must have length {grid.dims}")
    if not np.all(np.isfinite(x)):
        raise GridError(f"non-finite interpolation query {x.tolist()}")

    clamped = bool(np.any(x < grid.mins) or np.any(x > grid.maxs))
    xq = np.clip(x, grid.mins, grid.maxs)

    base = np.empty(grid.dims, dtype=np.intp)
    t = np.empty(grid.dims)
    for j in range(grid.dims):
        c = grid.coords[j]
        i0 = int(np.clip(np.floor((xq[j] - grid.mins[j]) / grid.spacing[j]), 0, grid.counts[j] - 2))
        # Guard against floor landing one cell off at exact grid coordinates.
        if xq[j] < c[i0] and i0 > 0:
            i0 -= 1
        elif xq[j] > c[i0 + 1] and i0 < grid.counts[j] - 2:
            i0 += 1
        base[j] = i0
        t[j] = (xq[j] - c[i0]) / (c[i0 + 1] - c[i0])

    value = 0.0
    for corner in range(1 << grid.dims):
        w = 1.0
        idx = []
        for j in range(grid.dims):
            if corner >> j & 1:
                w *= t[j]
                idx.append(base[j] + 1)
            else:
                w *= 1.0 - t[j]
                idx.append(base[j])
        if w != 0.0:
            value += w * field.values[tuple(idx)]
    return value, clamped


def levelset_from_bounds(grid: Grid, axis_bounds) -> ScalarField:
    """Signed-margin field for a box: positive inside, zero on the boundary,
    negative outside.

    ``axis_bounds`` is a list of ``(axis, lower, upper)``; either bound may
    be None for a half-space. The value is the min over constraints of the
    signed margin (``x_j - lower`` and ``upper - x_j``). An empty list
    yields the constant ``VACUOUS_MARGIN`` (everything inside).
    """
    pts = grid.all_points()
    margins = []
    for axis, lower, upper in axis_bounds:
        if not 0 <= axis < grid.dims:
            raise GridError(f"unknown axis {axis} for a {grid.dims}-dimensional grid")
        if lower is not None:
            margins.append(pts[:, axis] - float(lower))
        if upper is not None:
            margins.append(float(upper) - pts[:, axis])
    if not margins:
        values = np.full(grid.num_points, VACUOUS_MARGIN)
    else:
        values = np.min(np.stack(margins, axis=0), axis=0)
    return ScalarField(grid, values)


def write_field(fld: ScalarField, path) -> None:
    """Binary export: one UTF-8 JSON header line, then little-endian f64
    values in row-major order."""
    header = {
        "dims": fld.grid.dims,
        "mins": fld.grid.mins.tolist(),
        "maxs": fld.grid.maxs.tolist(),
        "counts": [int(c) for c in fld.grid.counts],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(fld.values, dtype="<f8").tobytes())


def read_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        grid = make_grid(header["mins"], header["maxs"], header["counts"])
        raw = fh.read()
    values = np.frombuffer(raw, dtype="<f8")
    if values.size != grid.num_points:
        raise GridError(f"field file {path}: expected {grid.num_points} values, found {values.size}")
    return ScalarField(grid, values.astype(np.float64))


def write_field_csv(fld: ScalarField, path) -> None:
    """CSV export for small grids: one row per point, coordinates then value."""
    pts = fld.grid.all_points()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"x{j}" for j in range(fld.grid.dims)) + ",value\n")
        flat = fld.flat
        for i in range(pts.shape[0]):
            coords = ",".join(f"{c:.17g}" for c in pts[i])
            fh.write(f"{coords},{flat[i]:.17g}\n")
