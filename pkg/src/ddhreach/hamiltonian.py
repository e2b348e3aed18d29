"""Hamiltonian evaluation: the data-driven Hamiltonian (DDH), its
velocity-bound refinement, modular decomposition with known subsystems,
and a brute-force oracle for explicit dynamics.

The DDH lower-bounds the true Hamiltonian max_u p.f(x,u) by taking, for
each observed sample (x_i, u_i, v_i), the worst case of p.v over an
uncertainty set around v_i whose size is dictated by Lipschitz knowledge,
and then the best sample. Evaluation is pure; callers accumulate the
argmax indices they care about.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .data import (
    Dataset,
    InputElementwiseLipschitz,
    LipschitzSpec,
    OutputElementwiseLipschitz,
    SensitivityMatrixLipschitz,
    UniformLipschitz,
)

__all__ = [
    "UncertaintyRadius",
    "VelocityBound",
    "HamiltonianResult",
    "DataDrivenHamiltonian",
    "BruteForceHamiltonian",
    "BoundRefinedHamiltonian",
    "HamiltonianPart",
    "ModularHamiltonian",
    "uncertainty_radius",
    "ddh_inner_ball",
    "ddh_inner_rect",
    "ddh",
    "velocity_bound_min",
    "brute_force_hamiltonian",
    "evaluate",
    "evaluate_grid",
    "control_points",
]


class HamiltonianError(ValueError):
    pass


@dataclass(frozen=True)
class UncertaintyRadius:
    """Radius of the uncertainty set around one observed velocity: an
    l2 ball (scalar) or a hyperrectangle (per-dimension radii)."""

    kind: str  # "ball" | "rect"
    value: object  # float for ball, ndarray for rect


@dataclass(frozen=True)
class VelocityBound:
    """Hyperrectangular bound on achievable velocities, state-independent
    by default; ``at_state`` may map a state batch to per-state bounds."""

    lo: np.ndarray
    hi: np.ndarray
    at_state: Optional[object] = None  # callable X (M,n) -> (lo (M,n), hi (M,n))

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise HamiltonianError("velocity bound requires lo <= hi elementwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def bounds_at(self, X: np.ndarray):
        if self.at_state is not None:
            return self.at_state(X)
        M = X.shape[0]
        return np.broadcast_to(self.lo, (M, len(self.lo))), np.broadcast_to(self.hi, (M, len(self.hi)))


@dataclass(frozen=True)
class HamiltonianResult:
    """value plus, when a data-driven branch was active, the dataset index
    that attained the max (smallest index on ties)."""

    value: float
    argmax_index: Optional[int] = None
    part_indices: Optional[tuple] = None


@dataclass(frozen=True)
class DataDrivenHamiltonian:
    data: Dataset
    lipschitz: LipschitzSpec

    @property
    def n_x(self) -> int:
        return self.data.n_x


@dataclass(frozen=True)
class BruteForceHamiltonian:
    """max over a dense Cartesian control grid of p.f(x,u). Under-
    approximates the true Hamiltonian by at most the control-Lipschitz
    constant times the control spacing (measured, not certified)."""

    dynamics: object
    control_counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.control_counts))
        if any(c < 2 for c in counts):
            raise HamiltonianError("control grid needs at least 2 points per axis")
        object.__setattr__(self, "control_counts", counts)

    @property
    def n_x(self) -> int:
        return self.dynamics.n_x


@dataclass(frozen=True)
class BoundRefinedHamiltonian:
    """max of the inner Hamiltonian and the worst case over a velocity
    bound; tightens the DDH where data is scarce."""

    inner: object
    bound: VelocityBound

    def __post_init__(self):
        if isinstance(self.inner, BoundRefinedHamiltonian):
            raise HamiltonianError("bound refinement does not nest")

    @property
    def n_x(self) -> int:
        return self.inner.n_x


@dataclass(frozen=True)
class HamiltonianPart:
    """One subsystem of a modular split: the state components it models,
    the costate components it owns, and the spec evaluating it. Every part
    sees the full state; the costate sets must partition the dimensions."""

    state_indices: tuple
    costate_indices: tuple
    spec: object


@dataclass(frozen=True)
class ModularHamiltonian:
    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        object.__setattr__(self, "parts", parts)
        owned = [i for p in parts for i in p.costate_indices]
        if len(set(owned)) != len(owned):
            raise HamiltonianError(f"modular costate indices overlap: {sorted(owned)}")

    def check_partition(self, n_x: int) -> None:
        owned = sorted(i for p in self.parts for i in p.costate_indices)
        if owned != list(range(n_x)):
            raise HamiltonianError(f"modular costate indices {owned} must partition 0..{n_x - 1}")

    @property
    def n_x(self) -> int:
        return max(max(p.costate_indices) for p in self.parts) + 1


# --------------------------------------------------------------------------
# closed-form building blocks
# --------------------------------------------------------------------------


def uncertainty_radius(lip: LipschitzSpec, x, x_i) -> UncertaintyRadius:
    """Radius of the uncertainty set at query x propagated from sample
    state x_i, per the Lipschitz knowledge variant."""
    x = np.asarray(x, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    if x.shape != x_i.shape:
        raise HamiltonianError(f"state dimension mismatch: {x.shape} vs {x_i.shape}")
    d = np.abs(x - x_i)
    if isinstance(lip, UniformLipschitz):
        return UncertaintyRadius("ball", lip.constant * float(np.sqrt(np.sum(d * d))))
    if isinstance(lip, InputElementwiseLipschitz):
        return UncertaintyRadius("ball", float(lip.vec @ d))
    if isinstance(lip, OutputElementwiseLipschitz):
        return UncertaintyRadius("rect", lip.vec * float(np.sqrt(np.sum(d * d))))
    if isinstance(lip, SensitivityMatrixLipschitz):
        return UncertaintyRadius("rect", lip.mat @ d)
    raise HamiltonianError(f"unknown Lipschitz spec {type(lip).__name__}")


def ddh_inner_ball(p, v_i, r: float) -> float:
    """min of p.v over the ball of radius r around v_i: p.v_i - r||p||.
    At p = 0 the minimizing direction is taken as zero, so the value is 0."""
    p = np.asarray(p, dtype=np.float64)
    v_i = np.asarray(v_i, dtype=np.float64)
    if p.shape != v_i.shape:
        raise HamiltonianError("costate/velocity dimension mismatch")
    return float(p @ v_i - r * np.sqrt(p @ p))


def ddh_inner_rect(p, v_i, r) -> float:
    """min of p.v over the hyperrectangle v_i +- r: each component takes
    v_ij - r_j when p_j >= 0 and v_ij + r_j otherwise."""
    p = np.asarray(p, dtype=np.float64)
    v_i = np.asarray(v_i, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if not (p.shape == v_i.shape == r.shape):
        raise HamiltonianError("costate/velocity/radius dimension mismatch")
    return float(np.sum(p * v_i - np.abs(p) * r))


def velocity_bound_min(p, bound: VelocityBound, x) -> float:
    """min of p.v over the hyperrectangle bound at state x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lo, hi = bound.bounds_at(x)
    p = np.asarray(p, dtype=np.float64)
    return float(np.sum(np.minimum(p * lo[0], p * hi[0])))


# --------------------------------------------------------------------------
# query-side penalty coefficients: all four variants collapse onto the two
# kernel shapes (see kernels module docstring)
# --------------------------------------------------------------------------


def _row_norms(P: np.ndarray) -> np.ndarray:
    acc = np.zeros(P.shape[0])
    for j in range(P.shape[1]):
        acc += P[:, j] * P[:, j]
    return np.sqrt(acc)


def _abs_dot(P: np.ndarray, vec: np.ndarray) -> np.ndarray:
    acc = np.zeros(P.shape[0])
    for j in range(P.shape[1]):
        acc += np.abs(P[:, j]) * vec[j]
    return acc


def _ddh_grid(data: Dataset, lip: LipschitzSpec, X: np.ndarray, P: np.ndarray):
    if len(data) == 0:
        raise HamiltonianError("data-driven Hamiltonian over an empty dataset")
    if data.n_x != X.shape[1]:
        raise HamiltonianError(f"dataset dimension {data.n_x} != query dimension {X.shape[1]}")
    if isinstance(lip, UniformLipschitz):
        return kernels.ddh_norm_penalty(X, P, data.xs, data.vs, lip.constant * _row_norms(P))
    if isinstance(lip, OutputElementwiseLipschitz):
        return kernels.ddh_norm_penalty(X, P, data.xs, data.vs, _abs_dot(P, lip.vec))
    if isinstance(lip, InputElementwiseLipschitz):
        W = _row_norms(P)[:, None] * lip.vec[None, :]
        return kernels.ddh_wabs_penalty(X, P, data.xs, data.vs, W)
    if isinstance(lip, SensitivityMatrixLipschitz):
        W = np.stack([_abs_dot(P, lip.mat[:, k]) for k in range(data.n_x)], axis=1)
        return kernels.ddh_wabs_penalty(X, P, data.xs, data.vs, W)
    raise HamiltonianError(f"unknown Lipschitz spec {type(lip).__name__}")


def ddh(x, p, data: Dataset, lip: LipschitzSpec) -> HamiltonianResult:
    """Data-driven Hamiltonian at one query: outer max over samples of the
    inner worst case over each sample's uncertainty set. O(N n_x)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    P = np.atleast_2d(np.asarray(p, dtype=np.float64))
    vals, idxs = _ddh_grid(data, lip, X, P)
    return HamiltonianResult(float(vals[0]), int(idxs[0]))


# --------------------------------------------------------------------------
# brute force over a control grid
# --------------------------------------------------------------------------


def control_points(control_lo, control_hi, counts) -> np.ndarray:
    """Cartesian control grid (K, n_u), endpoints included."""
    axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(control_lo, control_hi, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _brute_grid(spec: BruteForceHamiltonian, X: np.ndarray, P: np.ndarray) -> np.ndarray:
    dyn = spec.dynamics
    U = control_points(dyn.control_lo, dyn.control_hi, spec.control_counts)
    tables = getattr(dyn, "affine_tables", None)
    if tables is not None:
        C0, CX = tables(U)
        return kernels.brute_affine_max(X, P, C0, CX)
    best = np.full(X.shape[0], -np.inf)
    for k in range(U.shape[0]):
        V = dyn.f_batch(X, U[k])
        acc = np.zeros(X.shape[0])
        for j in range(X.shape[1]):
            acc += P[:, j] * V[:, j]
        np.maximum(best, acc, out=best)
    return best


def brute_force_hamiltonian(dynamics, x, p, control_counts) -> float:
    """max over the control grid of p.f(x,u) at one query point."""
    spec = BruteForceHamiltonian(dynamics, tuple(control_counts))
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    P = np.atleast_2d(np.asarray(p, dtype=np.float64))
    return float(_brute_grid(spec, X, P)[0])


# --------------------------------------------------------------------------
# unified evaluation
# --------------------------------------------------------------------------


def _bound_min_grid(bound: VelocityBound, X: np.ndarray, P: np.ndarray) -> np.ndarray:
    lo, hi = bound.bounds_at(X)
    acc = np.zeros(X.shape[0])
    for j in range(X.shape[1]):
        acc += np.minimum(P[:, j] * lo[:, j], P[:, j] * hi[:, j])
    return acc


def evaluate_grid(spec, X, P):
    """Batch evaluation. Returns ``(values, index_arrays)`` where each index
    array holds the DDH argmax per query for one data-driven component, or
    -1 where that component was not the active branch."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    P = np.ascontiguousarray(np.atleast_2d(P), dtype=np.float64)
    if isinstance(spec, DataDrivenHamiltonian):
        vals, idx = _ddh_grid(spec.data, spec.lipschitz, X, P)
        return vals, [idx]
    if isinstance(spec, BruteForceHamiltonian):
        return _brute_grid(spec, X, P), []
    if isinstance(spec, BoundRefinedHamiltonian):
        inner_vals, idx_arrays = evaluate_grid(spec.inner, X, P)
        bound_vals = _bound_min_grid(spec.bound, X, P)
        vals = np.maximum(inner_vals, bound_vals)
        # DDH branch wins ties so the recorded index stays meaningful.
        active = inner_vals >= bound_vals
        idx_arrays = [np.where(active, idx, -1) for idx in idx_arrays]
        return vals, idx_arrays
    if isinstance(spec, ModularHamiltonian):
        spec.check_partition(X.shape[1])
        total = np.zeros(X.shape[0])
        idx_arrays = []
        for part in spec.parts:
            Pm = np.zeros_like(P)
            for j in part.costate_indices:
                Pm[:, j] = P[:, j]
            vals, idxs = evaluate_grid(part.spec, X, Pm)
            total += vals
            idx_arrays.extend(idxs)
        return total, idx_arrays
    raise HamiltonianError(f"unknown Hamiltonian spec {type(spec).__name__}")


def evaluate(spec, x, p) -> HamiltonianResult:
    """Single-query evaluation with argmax bookkeeping.

    The argmax index is present only when a data-driven component was the
    active branch (for the bound-refined variant, a missing index signals
    "fall back to the bound" to policy extraction). Modular results carry
    one entry per part, None for parts without an active data index; the
    headline index is the first part's."""
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if isinstance(spec, ModularHamiltonian):
        spec.check_partition(len(np.atleast_1d(x)))
        total = 0.0
        per_part = []
        for part in spec.parts:
            pm = np.zeros_like(np.atleast_1d(p))
            for j in part.costate_indices:
                pm[j] = np.atleast_1d(p)[j]
            sub = evaluate(part.spec, x, pm)
            total += sub.value
            per_part.append(sub.argmax_index)
        per_part = tuple(per_part)
        headline = next((i for i in per_part if i is not None), None)
        return HamiltonianResult(total, headline, per_part)
    X = np.atleast_2d(x)
    P = np.atleast_2d(p)
    vals, idx_arrays = evaluate_grid(spec, X, P)
    per_part = tuple(int(idx[0]) if idx[0] >= 0 else None for idx in idx_arrays)
    headline = next((i for i in per_part if i is not None), None)
    return HamiltonianResult(float(vals[0]), headline, None)
