"""Trajectory sample storage, dataset I/O, Lipschitz specs and estimation,
and argmax-based pruning.

A dataset is an ordered list of (state, control, velocity) observations;
the order is load order and defines the tie-breaking identity used by the
Hamiltonian argmax and by pruning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Sample",
    "Dataset",
    "LipschitzSpec",
    "UniformLipschitz",
    "InputElementwiseLipschitz",
    "OutputElementwiseLipschitz",
    "SensitivityMatrixLipschitz",
    "load_dataset",
    "save_dataset",
    "estimate_lipschitz",
    "prune",
]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    """One observation: state x, control u, and exact state velocity
    v = f(x, u) as reported by the simulator."""

    x: np.ndarray
    u: np.ndarray
    v: np.ndarray


class Dataset:
    """Immutable, homogeneous collection of samples.

    Stored column-wise as (N, n_x)/(N, n_u)/(N, n_x) float arrays so the
    Hamiltonian kernels can consume them directly.
    """

    def __init__(self, xs, us, vs):
        xs = np.ascontiguousarray(np.atleast_2d(np.asarray(xs, dtype=np.float64)))
        us = np.ascontiguousarray(np.atleast_2d(np.asarray(us, dtype=np.float64)))
        vs = np.ascontiguousarray(np.atleast_2d(np.asarray(vs, dtype=np.float64)))
        if xs.size == 0:
            xs = xs.reshape(0, xs.shape[-1] if xs.ndim == 2 else 0)
            us = us.reshape(0, us.shape[-1] if us.ndim == 2 else 0)
            vs = vs.reshape(0, vs.shape[-1] if vs.ndim == 2 else 0)
        if not (xs.shape[0] == us.shape[0] == vs.shape[0]):
            raise DatasetError(f"sample count mismatch: {xs.shape[0]}, {us.shape[0]}, {vs.shape[0]}")
        if xs.shape[0] and xs.shape[1] != vs.shape[1]:
            raise DatasetError(f"velocity dimension {vs.shape[1]} must equal state dimension {xs.shape[1]}")
        for name, arr in (("x", xs), ("u", us), ("v", vs)):
            if not np.all(np.isfinite(arr)):
                raise DatasetError(f"non-finite {name} values in dataset")
        for arr in (xs, us, vs):
            arr.setflags(write=False)
        self.xs, self.us, self.vs = xs, us, vs

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def n_x(self) -> int:
        return self.xs.shape[1]

    @property
    def n_u(self) -> int:
        return self.us.shape[1]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.xs[i], self.us[i], self.vs[i])

    def extend(self, xs, us, vs) -> "Dataset":
        """New dataset with the given samples appended (order preserved)."""
        if len(self) == 0:
            return Dataset(xs, us, vs)
        return Dataset(
            np.vstack([self.xs, np.atleast_2d(xs)]),
            np.vstack([self.us, np.atleast_2d(us)]),
            np.vstack([self.vs, np.atleast_2d(vs)]),
        )

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.us, other.us)
            and np.array_equal(self.vs, other.vs)
        )


def empty_dataset(n_x: int, n_u: int) -> Dataset:
    return Dataset(
        np.zeros((0, n_x)), np.zeros((0, n_u)), np.zeros((0, n_x))
    )


# --------------------------------------------------------------------------
# Lipschitz knowledge variants. Each one induces an uncertainty-set geometry
# for the data-driven Hamiltonian: uniform/input-elementwise give l2 balls,
# output-elementwise/sensitivity-matrix give hyperrectangles.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzSpec:
    """Base class; ``certified`` distinguishes a guaranteed bound from an
    empirical estimate (estimates are lower bounds on the true constant and
    never a certificate)."""

    certified: bool = False

    @property
    def geometry(self) -> str:
        raise NotImplementedError

    def scaled(self, factor: float) -> "LipschitzSpec":
        raise NotImplementedError


@dataclass(frozen=True)
class UniformLipschitz(LipschitzSpec):
    """||f(x,u) - f(x',u)|| <= constant * ||x - x'||."""

    constant: float = 0.0

    def __post_init__(self):
        if self.constant < 0:
            raise DatasetError("Lipschitz constant must be nonnegative")

    geometry = "ball"

    def scaled(self, factor):
        return replace(self, constant=self.constant * factor)


@dataclass(frozen=True)
class InputElementwiseLipschitz(LipschitzSpec):
    """||f(x,u) - f(x',u)|| <= sum_j vec_j |x_j - x'_j|."""

    vec: np.ndarray = None

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=np.float64)
        if np.any(vec < 0):
            raise DatasetError("Lipschitz vector entries must be nonnegative")
        object.__setattr__(self, "vec", vec)

    geometry = "ball"

    def scaled(self, factor):
        return replace(self, vec=self.vec * factor)


@dataclass(frozen=True)
class OutputElementwiseLipschitz(LipschitzSpec):
    """|f_i(x,u) - f_i(x',u)| <= vec_i ||x - x'||."""

    vec: np.ndarray = None

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=np.float64)
        if np.any(vec < 0):
            raise DatasetError("Lipschitz vector entries must be nonnegative")
        object.__setattr__(self, "vec", vec)

    geometry = "rect"

    def scaled(self, factor):
        return replace(self, vec=self.vec * factor)


@dataclass(frozen=True)
class SensitivityMatrixLipschitz(LipschitzSpec):
    """|f_i(x,u) - f_i(x',u)| <= sum_j mat_ij |x_j - x'_j| (n_x by n_x)."""

    mat: np.ndarray = None

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DatasetError(f"sensitivity matrix must be square, got shape {mat.shape}")
        if np.any(mat < 0):
            raise DatasetError("sensitivity matrix entries must be nonnegative")
        object.__setattr__(self, "mat", mat)

    geometry = "rect"

    def scaled(self, factor):
        return replace(self, mat=self.mat * factor)


# --------------------------------------------------------------------------
# CSV I/O. Header `x0..,u0..,v0..`, one sample per row, 17 significant
# digits so save -> load round-trips bit-exactly.
# --------------------------------------------------------------------------


def _parse_header(names):
    n_x = sum(1 for n in names if n.startswith("x"))
    n_u = sum(1 for n in names if n.startswith("u"))
    n_v = sum(1 for n in names if n.startswith("v"))
    expected = [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)] + [f"v{i}" for i in range(n_v)]
    if names != expected or n_v != n_x or n_x == 0:
        raise DatasetError(f"malformed dataset header: {names}")
    return n_x, n_u


def load_dataset(path) -> Dataset:
    """Parse a dataset CSV; dimensions come from the header, order from the
    file. Errors name the offending 1-based data row."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise DatasetError(f"{path}: empty file")
        names = [n.strip() for n in header.split(",")]
        n_x, n_u = _parse_header(names)
        width = n_x + n_u + n_x
        rows = []
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != width:
                raise DatasetError(f"{path}: row {lineno} has {len(parts)} fields, expected {width}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DatasetError(f"{path}: row {lineno}: {exc}") from exc
            if not all(np.isfinite(vals)):
                raise DatasetError(f"{path}: row {lineno} contains a non-finite value")
            rows.append(vals)
    if not rows:
        return empty_dataset(n_x, n_u)
    arr = np.asarray(rows, dtype=np.float64)
    return Dataset(arr[:, :n_x], arr[:, n_x : n_x + n_u], arr[:, n_x + n_u :])


def save_dataset(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        names = (
            [f"x{i}" for i in range(data.n_x)]
            + [f"u{i}" for i in range(data.n_u)]
            + [f"v{i}" for i in range(data.n_x)]
        )
        fh.write(",".join(names) + "\n")
        for i in range(len(data)):
            row = np.concatenate([data.xs[i], data.us[i], data.vs[i]])
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# --------------------------------------------------------------------------
# Empirical Lipschitz estimation from same-control sample pairs.
# --------------------------------------------------------------------------


def _same_control_pairs(data: Dataset, control_tolerance: float):
    """Index pairs (i, k), i < k, with ||u_i - u_k|| <= tol and x_i != x_k."""
    n = len(data)
    pairs = []
    for i in range(n):
        du = data.us[i + 1 :] - data.us[i]
        close = np.sqrt(np.sum(du * du, axis=1)) <= control_tolerance
        for off in np.nonzero(close)[0]:
            k = i + 1 + int(off)
            if np.any(data.xs[i] != data.xs[k]):
                pairs.append((i, k))
    return pairs


def estimate_lipschitz(data: Dataset, variant: str, control_tolerance: float = 1e-9) -> LipschitzSpec:
    """Tightest constants consistent with every same-control sample pair.

    ``variant`` is one of {"uniform", "input", "output", "matrix"}. The
    result is an empirical lower bound on the true constant (``certified``
    stays False): unseen state pairs can always be worse. Sparse control
    matches weaken the estimate; widen ``control_tolerance`` knowingly.
    """
    if len(data) < 2:
        raise DatasetError("need at least 2 samples to estimate Lipschitz constants")
    pairs = _same_control_pairs(data, control_tolerance)
    if not pairs:
        raise DatasetError(
            f"no sample pair has controls within {control_tolerance}; "
            "widen control_tolerance or collect repeated-control data"
        )
    dx = np.abs(np.stack([data.xs[i] - data.xs[k] for i, k in pairs]))
    dv = np.stack([data.vs[i] - data.vs[k] for i, k in pairs])
    dx_norm = np.sqrt(np.sum(dx * dx, axis=1))
    dv_norm = np.sqrt(np.sum(dv * dv, axis=1))

    if variant == "uniform":
        return UniformLipschitz(constant=float(np.max(dv_norm / dx_norm)))
    if variant == "output":
        return OutputElementwiseLipschitz(vec=np.max(np.abs(dv) / dx_norm[:, None], axis=0))
    if variant in ("input", "matrix"):
        from scipy.optimize import linprog

        def tightest_row(rhs):
            # minimize sum(L) s.t. dx @ L >= rhs, L >= 0; the minimal-sum
            # vector among all feasible ones (the tight face is not unique
            # for vector-valued constants).
            res = linprog(c=np.ones(data.n_x), A_ub=-dx, b_ub=-rhs, bounds=(0, None), method="highs")
            if not res.success:
                raise DatasetError(f"Lipschitz LP failed: {res.message}")
            return res.x

        if variant == "input":
            return InputElementwiseLipschitz(vec=tightest_row(dv_norm))
        return SensitivityMatrixLipschitz(
            mat=np.stack([tightest_row(np.abs(dv[:, i])) for i in range(data.n_x)])
        )
    raise DatasetError(f"unknown Lipschitz variant {variant!r}")


def prune(data: Dataset, used_indices) -> tuple:
    """Keep exactly the samples whose index was used as a Hamiltonian
    argmax; returns ``(pruned, index_map)`` with old -> new indices.

    Relative order is preserved, which is what makes re-solving on the
    pruned dataset reproduce values and (mapped) argmaxes bit-exactly.
    """
    used = sorted(set(int(i) for i in used_indices))
    if used and (used[0] < 0 or used[-1] >= len(data)):
        raise DatasetError(f"used index out of range 0..{len(data) - 1}")
    if not used:
        warnings.warn("pruning to an empty index set; downstream DDH is undefined", stacklevel=2)
        return empty_dataset(data.n_x, data.n_u), {}
    index_map = {old: new for new, old in enumerate(used)}
    sel = np.asarray(used, dtype=np.intp)
    return Dataset(data.xs[sel], data.us[sel], data.vs[sel]), index_map
