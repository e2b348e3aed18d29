"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The data-driven Hamiltonian sweep is O(grid_points * samples * dims) per
solver step and dominates runtime, so it lives here. Backend selection:

    DDHREACH_BACKEND=numba   require numba (error if unavailable)
    DDHREACH_BACKEND=numpy   force the pure-numpy path
    unset / auto             numba when importable, else numpy

Both backends scan samples in index order with a strict greater-than
update, so the argmax tie-break (smallest index) and the per-pair
arithmetic are identical; results do not depend on the worker count.

All four Lipschitz variants reduce to two penalty shapes, with the
query-side coefficients precomputed by the caller:

    norm penalty:  value_i = p . v_i - coef * ||x - x_i||
      (uniform ball: coef = L ||p||; output-elementwise rectangle:
       coef = sum_j |p_j| L_j)
    weighted-abs penalty:  value_i = p . v_i - w . |x - x_i|
      (input-elementwise ball: w = ||p|| L; sensitivity matrix
       rectangle: w = L^T |p|)

`benchmarks/bench_backends.py` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "backend_name",
    "set_workers",
    "ddh_norm_penalty",
    "ddh_wabs_penalty",
    "brute_affine_max",
]

_requested = os.environ.get("DDHREACH_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"DDHREACH_BACKEND must be auto/numba/numpy, got {_requested!r}")

_numba = None
if _requested in ("auto", "numba"):
    try:
        import numba as _numba
    except ImportError:
        if _requested == "numba":
            raise
        _numba = None

_BACKEND = "numba" if _numba is not None else "numpy"


def backend_name() -> str:
    return _BACKEND


def set_workers(n: int) -> int:
    """Set the kernel thread count (clamped to what numba allows).

    Results are identical for any worker count: the parallel loop writes
    disjoint outputs. Returns the effective count."""
    if _numba is None:
        return 1
    n = max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS))
    _numba.set_num_threads(n)
    return n


# --------------------------------------------------------------------------
# pure-numpy implementations (reference semantics)
# --------------------------------------------------------------------------


def _ddh_norm_np(X, P, xs, vs, coefs):
    M, n = X.shape
    best = np.full(M, -np.inf)
    besti = np.full(M, -1, dtype=np.int64)
    for i in range(xs.shape[0]):
        acc = np.zeros(M)
        for j in range(n):
            d = X[:, j] - xs[i, j]
            acc += d * d
        pv = np.zeros(M)
        for j in range(n):
            pv += P[:, j] * vs[i, j]
        val = pv - coefs * np.sqrt(acc)
        upd = val > best
        best[upd] = val[upd]
        besti[upd] = i
    return best, besti


def _ddh_wabs_np(X, P, xs, vs, W):
    M, n = X.shape
    best = np.full(M, -np.inf)
    besti = np.full(M, -1, dtype=np.int64)
    for i in range(xs.shape[0]):
        pen = np.zeros(M)
        for j in range(n):
            pen += W[:, j] * np.abs(X[:, j] - xs[i, j])
        pv = np.zeros(M)
        for j in range(n):
            pv += P[:, j] * vs[i, j]
        val = pv - pen
        upd = val > best
        best[upd] = val[upd]
        besti[upd] = i
    return best, besti


def _brute_affine_np(X, P, C0, CX):
    M, n = X.shape
    best = np.full(M, -np.inf)
    for k in range(C0.shape[0]):
        acc = np.zeros(M)
        for j in range(n):
            fj = np.full(M, C0[k, j])
            for l in range(n):
                fj += CX[k, j, l] * X[:, l]
            acc += P[:, j] * fj
        np.maximum(best, acc, out=best)
    return best


# --------------------------------------------------------------------------
# numba implementations (same arithmetic, scalar loops, parallel over
# grid points)
# --------------------------------------------------------------------------

if _numba is not None:
    from numba import njit, prange

    @njit(parallel=True, cache=True)
    def _ddh_norm_nb(X, P, xs, vs, coefs):  # pragma: no cover - jit
        M, n = X.shape
        N = xs.shape[0]
        best = np.empty(M)
        besti = np.empty(M, dtype=np.int64)
        for m in prange(M):
            b = -np.inf
            bi = -1
            for i in range(N):
                acc = 0.0
                for j in range(n):
                    d = X[m, j] - xs[i, j]
                    acc += d * d
                pv = 0.0
                for j in range(n):
                    pv += P[m, j] * vs[i, j]
                val = pv - coefs[m] * np.sqrt(acc)
                if val > b:
                    b = val
                    bi = i
            best[m] = b
            besti[m] = bi
        return best, besti

    @njit(parallel=True, cache=True)
    def _ddh_wabs_nb(X, P, xs, vs, W):  # pragma: no cover - jit
        M, n = X.shape
        N = xs.shape[0]
        best = np.empty(M)
        besti = np.empty(M, dtype=np.int64)
        for m in prange(M):
            b = -np.inf
            bi = -1
            for i in range(N):
                pen = 0.0
                for j in range(n):
                    pen += W[m, j] * abs(X[m, j] - xs[i, j])
                pv = 0.0
                for j in range(n):
                    pv += P[m, j] * vs[i, j]
                val = pv - pen
                if val > b:
                    b = val
                    bi = i
            best[m] = b
            besti[m] = bi
        return best, besti

    @njit(parallel=True, cache=True)
    def _brute_affine_nb(X, P, C0, CX):  # pragma: no cover - jit
        M, n = X.shape
        K = C0.shape[0]
        best = np.empty(M)
        for m in prange(M):
            b = -np.inf
            for k in range(K):
                acc = 0.0
                for j in range(n):
                    fj = C0[k, j]
                    for l in range(n):
                        fj += CX[k, j, l] * X[m, l]
                    acc += P[m, j] * fj
                if acc > b:
                    b = acc
            best[m] = b
        return best


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def ddh_norm_penalty(X, P, xs, vs, coefs):
    """max_i [p . v_i - coef * ||x - x_i||] per query row; returns
    (values, argmax indices). Ties go to the smallest index."""
    X, P, xs, vs, coefs = _c(X), _c(P), _c(xs), _c(vs), _c(coefs)
    if _BACKEND == "numba":
        return _ddh_norm_nb(X, P, xs, vs, coefs)
    return _ddh_norm_np(X, P, xs, vs, coefs)


def ddh_wabs_penalty(X, P, xs, vs, W):
    """max_i [p . v_i - w . |x - x_i|] per query row; returns
    (values, argmax indices). Ties go to the smallest index."""
    X, P, xs, vs, W = _c(X), _c(P), _c(xs), _c(vs), _c(W)
    if _BACKEND == "numba":
        return _ddh_wabs_nb(X, P, xs, vs, W)
    return _ddh_wabs_np(X, P, xs, vs, W)


def brute_affine_max(X, P, C0, CX):
    """max_k p . (C0_k + CX_k x) per query row, for state-affine dynamics
    tabulated over a control grid."""
    X, P, C0, CX = _c(X), _c(P), _c(C0), _c(CX)
    if _BACKEND == "numba":
        return _brute_affine_nb(X, P, C0, CX)
    return _brute_affine_np(X, P, C0, CX)
