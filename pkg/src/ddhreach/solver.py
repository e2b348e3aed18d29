"""Time-marching solver for the avoid / reach-avoid HJ variational
inequalities on a grid.

Lax-Friedrichs numerical Hamiltonian with upwind one-sided differences,
explicit Euler in time (optional two-stage TVD RK behind a flag), CFL-
controlled steps, early-convergence detection, and accumulation of every
data-driven argmax index selected at any grid point at any step (the
pruning contract depends on collecting them all).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import (
    InputElementwiseLipschitz,
    OutputElementwiseLipschitz,
    SensitivityMatrixLipschitz,
    UniformLipschitz,
)
from .grid import Grid, ScalarField, write_field
from .hamiltonian import (
    BoundRefinedHamiltonian,
    BruteForceHamiltonian,
    DataDrivenHamiltonian,
    ModularHamiltonian,
    control_points,
    evaluate,
    evaluate_grid,
)

__all__ = [
    "Problem",
    "SolveConfig",
    "SolveResult",
    "NumericalAbort",
    "auto_dissipation",
    "lf_numerical_hamiltonian",
    "step_avoid",
    "step_reach_avoid",
    "solve",
    "write_solve_outputs",
]


class SolverError(ValueError):
    pass


class NumericalAbort(RuntimeError):
    """Non-finite value during time marching; carries diagnostics."""

    def __init__(self, step: int, flat_index: int, coords):
        self.step = step
        self.flat_index = flat_index
        self.coords = np.asarray(coords)
        super().__init__(
            f"non-finite value at step {step}, grid point {flat_index} at {self.coords.tolist()}"
        )


@dataclass(frozen=True)
class Problem:
    """Avoid: stay out of {unsafe <= 0}. Reach-avoid: additionally reach
    {target >= 0} within the horizon."""

    kind: str
    unsafe: ScalarField
    horizon: float
    hamiltonian: object
    target: Optional[ScalarField] = None

    def __post_init__(self):
        if self.kind not in ("avoid", "reach_avoid"):
            raise SolverError(f"unknown problem kind {self.kind!r}")
        if self.kind == "reach_avoid":
            if self.target is None:
                raise SolverError("reach_avoid needs a target field")
            if self.target.grid != self.unsafe.grid:
                raise SolverError("target and unsafe fields must share one grid")
        # horizon 0 is allowed and reproduces the terminal condition
        if self.horizon < 0:
            raise SolverError("horizon must be nonnegative")

    @property
    def grid(self) -> Grid:
        return self.unsafe.grid


@dataclass(frozen=True)
class SolveConfig:
    cfl_factor: float = 0.5
    dissipation: object = "auto"  # "auto" or per-dimension array
    store_history: bool = False
    convergence_tol: float = 0.0  # 0 disables early stopping
    tvd_rk2: bool = False
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.cfl_factor <= 1:
            raise SolverError("cfl_factor must lie in (0, 1]")
        if self.convergence_tol < 0:
            raise SolverError("convergence_tol must be nonnegative")


@dataclass
class SolveResult:
    final_value: ScalarField
    used_indices: set
    steps_taken: int
    converged_early: bool
    horizon: float
    alpha: np.ndarray
    dt: float
    history: Optional[list] = None  # list of (time, ScalarField)


# --------------------------------------------------------------------------
# dissipation bounds
# --------------------------------------------------------------------------


def _max_corner_distance(xs: np.ndarray, grid: Grid) -> np.ndarray:
    """Per-sample, per-axis largest |x_j - x^i_j| over the grid domain."""
    return np.maximum(np.abs(grid.mins[None, :] - xs), np.abs(grid.maxs[None, :] - xs))


def auto_dissipation(spec, grid: Grid) -> np.ndarray:
    """Per-dimension bound alpha_j >= sup |dH/dp_j| over the grid domain.

    DDH: max_i |v^i_j| plus the largest uncertainty-radius component over
    the domain (a ball radius counts fully toward every dimension).
    Brute force: sampled |f_j| max times a 1.2 safety factor. Refined /
    modular: assembled from component bounds.
    """
    if isinstance(spec, DataDrivenHamiltonian):
        data, lip = spec.data, spec.lipschitz
        if len(data) == 0:
            raise SolverError("auto dissipation needs a nonempty dataset")
        vmax = np.max(np.abs(data.vs), axis=0)
        dmax = _max_corner_distance(data.xs, grid)
        if isinstance(lip, UniformLipschitz):
            rbar = np.full(grid.dims, lip.constant * np.max(np.sqrt(np.sum(dmax * dmax, axis=1))))
        elif isinstance(lip, InputElementwiseLipschitz):
            rbar = np.full(grid.dims, np.max(dmax @ lip.vec))
        elif isinstance(lip, OutputElementwiseLipschitz):
            rbar = lip.vec * np.max(np.sqrt(np.sum(dmax * dmax, axis=1)))
        elif isinstance(lip, SensitivityMatrixLipschitz):
            rbar = np.max(dmax @ lip.mat.T, axis=0)
        else:
            raise SolverError(f"unknown Lipschitz spec {type(lip).__name__}")
        return vmax + rbar
    if isinstance(spec, BruteForceHamiltonian):
        dyn = spec.dynamics
        pts = grid.all_points()
        if pts.shape[0] > 4096:  # deterministic subsample keeps this one sweep cheap
            stride = pts.shape[0] // 4096 + 1
            pts = pts[::stride]
        U = control_points(dyn.control_lo, dyn.control_hi, spec.control_counts)
        bound = np.zeros(grid.dims)
        for u in U:
            V = dyn.f_batch(pts, u)
            bound = np.maximum(bound, np.max(np.abs(V), axis=0))
        return bound * 1.2
    if isinstance(spec, BoundRefinedHamiltonian):
        inner = auto_dissipation(spec.inner, grid)
        lo, hi = spec.bound.bounds_at(grid.all_points()[:1])
        outer = np.maximum(np.abs(lo), np.abs(hi)).max(axis=0)
        return np.maximum(inner, outer)
    if isinstance(spec, ModularHamiltonian):
        alpha = np.zeros(grid.dims)
        for part in spec.parts:
            part_alpha = auto_dissipation(part.spec, grid)
            for j in part.costate_indices:
                alpha[j] += part_alpha[j]
        return alpha
    raise SolverError(f"unknown Hamiltonian spec {type(spec).__name__}")


# --------------------------------------------------------------------------
# Lax-Friedrichs pieces
# --------------------------------------------------------------------------


def lf_numerical_hamiltonian(spec, x, p_minus, p_plus, alpha) -> float:
    """H(x, (p- + p+)/2) - 1/2 sum_j alpha_j (p+_j - p-_j)."""
    p_minus = np.asarray(p_minus, dtype=np.float64)
    p_plus = np.asarray(p_plus, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    value = evaluate(spec, x, 0.5 * (p_minus + p_plus)).value
    return float(value - 0.5 * np.sum(alpha * (p_plus - p_minus)))


def _one_sided_gradients(values: np.ndarray, grid: Grid):
    """Upwind differences per axis; at the domain boundary the one
    available one-sided difference is copied to both sides (so the
    central average is the boundary one-sided gradient and the jump
    dissipation vanishes there)."""
    minus, plus = [], []
    for j in range(grid.dims):
        d = np.diff(values, axis=j) / grid.spacing[j]
        first = np.take(d, [0], axis=j)
        last = np.take(d, [-1], axis=j)
        minus.append(np.concatenate([first, d], axis=j))
        plus.append(np.concatenate([d, last], axis=j))
    return minus, plus


def _hamiltonian_sweep(spec, points: np.ndarray, values: np.ndarray, grid: Grid, alpha: np.ndarray):
    """LF numerical Hamiltonian over the whole grid; returns (H_num flat,
    per-component argmax index arrays).

    The VI here marches V' = V + dt * H_num (the Hamiltonian enters with a
    plus sign), so the monotone LF pairing feeds the upwind differences to
    the standard formula with swapped roles: the jump term enters as
    +1/2 sum_j alpha_j (D+_j - D-_j), a diffusion. The central average is
    unaffected."""
    minus, plus = _one_sided_gradients(values, grid)
    M = points.shape[0]
    P = np.empty((M, grid.dims))
    diss = np.zeros(values.shape)
    for j in range(grid.dims):
        P[:, j] = (0.5 * (minus[j] + plus[j])).reshape(-1)
        diss += (0.5 * alpha[j]) * (plus[j] - minus[j])
    vals, idx_arrays = evaluate_grid(spec, points, P)
    return vals.reshape(values.shape) + diss, idx_arrays


def _used_indices(idx_arrays) -> np.ndarray:
    """Unique argmax indices over every grid point. Clamped points count
    too: after pruning, a discarded argmax could drop a clamped point's
    candidate below its obstacle and change the update, so bit-exact
    round trips need every point's index."""
    if not idx_arrays:
        return np.empty(0, dtype=np.int64)
    cat = idx_arrays[0] if len(idx_arrays) == 1 else np.concatenate(idx_arrays)
    used = np.unique(cat)
    return used[used >= 0]


def _check_cfl(grid: Grid, alpha: np.ndarray, dt: float):
    limit = float(np.min(grid.spacing / np.maximum(alpha, 1e-300)))
    if dt > limit * (1 + 1e-12):
        raise SolverError(f"CFL violation: dt={dt} exceeds min(spacing/alpha)={limit}")


def _vi_avoid(candidate: np.ndarray, unsafe: np.ndarray) -> np.ndarray:
    return np.minimum(unsafe, candidate)


def _vi_reach_avoid(candidate: np.ndarray, target: np.ndarray, unsafe: np.ndarray) -> np.ndarray:
    return np.minimum(unsafe, np.maximum(target, candidate))


def step_avoid(V: ScalarField, unsafe: ScalarField, spec, alpha, dt: float):
    """One backward-time step of the avoid HJ-VI:
    V' = min(unsafe, V + dt * H_num). Returns (field, used index set):
    the argmax indices at points where the candidate survived the clamp."""
    _check_cfl(V.grid, np.asarray(alpha, dtype=np.float64), dt)
    h_num, idx_arrays = _hamiltonian_sweep(
        spec, V.grid.all_points(), V.values, V.grid, np.asarray(alpha, dtype=np.float64)
    )
    out = _vi_avoid(V.values + dt * h_num, unsafe.values)
    used = _used_indices(idx_arrays)
    return ScalarField(V.grid, out), set(int(i) for i in used)


def step_reach_avoid(V: ScalarField, target: ScalarField, unsafe: ScalarField, spec, alpha, dt: float):
    """One backward-time step of the reach-avoid HJ-VI:
    V' = min(unsafe, max(target, V + dt * H_num))."""
    _check_cfl(V.grid, np.asarray(alpha, dtype=np.float64), dt)
    h_num, idx_arrays = _hamiltonian_sweep(
        spec, V.grid.all_points(), V.values, V.grid, np.asarray(alpha, dtype=np.float64)
    )
    out = _vi_reach_avoid(V.values + dt * h_num, target.values, unsafe.values)
    used = _used_indices(idx_arrays)
    return ScalarField(V.grid, out), set(int(i) for i in used)


# --------------------------------------------------------------------------
# time marching
# --------------------------------------------------------------------------


def solve(problem: Problem, config: SolveConfig = SolveConfig()) -> SolveResult:
    """March the appropriate VI from the terminal condition to the horizon.

    dt is cfl_factor / sum_j(alpha_j / spacing_j), which keeps the scheme
    monotone in any dimension (and is stricter than the per-axis bound);
    the last step is shortened to land exactly on the horizon. used
    indices accumulate over every step and every grid point.
    """
    from . import kernels

    kernels.set_workers(config.workers)
    grid = problem.grid
    spec = problem.hamiltonian

    if isinstance(config.dissipation, str) and config.dissipation == "auto":
        alpha = auto_dissipation(spec, grid)
    else:
        alpha = np.asarray(config.dissipation, dtype=np.float64)
        if alpha.shape != (grid.dims,):
            raise SolverError(f"dissipation must have {grid.dims} entries")
    if np.any(alpha < 0):
        raise SolverError("dissipation must be nonnegative")

    rate = float(np.sum(alpha / grid.spacing))
    if problem.horizon == 0.0:
        dt = 0.0
    elif rate == 0.0:
        dt = problem.horizon
    else:
        dt = min(config.cfl_factor / rate, problem.horizon)

    unsafe = problem.unsafe.values
    if problem.kind == "avoid":
        V = unsafe.copy()
        target = None
    else:
        target = problem.target.values
        V = np.minimum(target, unsafe)

    def advance(v, h):
        if target is None:
            return _vi_avoid(v + h, unsafe)
        return _vi_reach_avoid(v + h, target, unsafe)

    points = grid.all_points()
    used: set = set()
    history = [(0.0, ScalarField(grid, V))] if config.store_history else None

    t = 0.0
    steps = 0
    converged = False
    while t < problem.horizon - 1e-15:
        step_dt = min(dt, problem.horizon - t)
        h_num, idx_arrays = _hamiltonian_sweep(spec, points, V, grid, alpha)
        V_next = advance(V, step_dt * h_num)
        new_used = _used_indices(idx_arrays)
        if config.tvd_rk2:
            h2, idx2 = _hamiltonian_sweep(spec, points, V_next, grid, alpha)
            V_next = advance(V_next, step_dt * h2)
            V_next = 0.5 * (V + V_next)
            new_used = np.union1d(new_used, _used_indices(idx2))
        if not np.all(np.isfinite(V_next)):
            bad = int(np.flatnonzero(~np.isfinite(V_next.reshape(-1)))[0])
            raise NumericalAbort(steps, bad, points[bad])
        used.update(int(i) for i in new_used)
        delta = float(np.max(np.abs(V_next - V)))
        V = V_next
        t += step_dt
        steps += 1
        if config.store_history:
            history.append((t, ScalarField(grid, V)))
        if config.convergence_tol > 0 and delta < config.convergence_tol:
            converged = True
            break

    return SolveResult(
        final_value=ScalarField(grid, V),
        used_indices=used,
        steps_taken=steps,
        converged_early=converged,
        horizon=problem.horizon,
        alpha=alpha,
        dt=dt,
        history=history,
    )


def write_solve_outputs(result: SolveResult, out_dir, basename="value", kind="", cfl_factor=None) -> None:
    """Field binary plus a metadata JSON (horizon, steps, CFL, alpha, used
    indices, convergence flag)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    write_field(result.final_value, os.path.join(out_dir, f"{basename}.field"))
    meta = {
        "kind": kind,
        "horizon": result.horizon,
        "steps_taken": result.steps_taken,
        "converged_early": result.converged_early,
        "cfl_factor": cfl_factor,
        "dt": result.dt,
        "alpha": result.alpha.tolist(),
        "used_indices": sorted(int(i) for i in result.used_indices),
    }
    with open(os.path.join(out_dir, f"{basename}_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
