"""Safe control extraction from a data-driven value function, and the
three-branch switching exploration policy.

The safe action replays the stored control of the dataset sample that
attains the data-driven Hamiltonian at the local value gradient; doing so
is guaranteed to do at least as well as the worst-case uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, LipschitzSpec
from .grid import ScalarField, gradient_fields, interpolate
from .hamiltonian import DataDrivenHamiltonian, evaluate

__all__ = ["PolicyContext", "safe_action", "switching_policy"]


class PolicyError(ValueError):
    pass


@dataclass
class PolicyContext:
    """Everything the safe policy needs: the solved value field, the
    dataset it was computed from, the Lipschitz knowledge, the safety
    threshold, and the horizon. Immutable in use; share freely across
    concurrent rollouts."""

    value_field: ScalarField
    dataset: Dataset
    lipschitz: LipschitzSpec
    horizon: float
    epsilon: float = 0.05
    hamiltonian: Optional[object] = None  # defaults to the plain DDH
    _grads: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise PolicyError("epsilon must be positive")
        if self.hamiltonian is None:
            self.hamiltonian = DataDrivenHamiltonian(self.dataset, self.lipschitz)
        # Central-difference gradient fields, interpolated off-grid; computed
        # once and reused by every rollout sharing this context.
        self._grads = gradient_fields(self.value_field)

    def gradient_at(self, x) -> np.ndarray:
        return np.array([interpolate(g, x)[0] for g in self._grads])

    def value_at(self, x):
        return interpolate(self.value_field, x)


def safe_action(ctx: PolicyContext, x):
    """Control of the dataset sample attaining the DDH at the interpolated
    value gradient; returns (control, index).

    When a bound-refined Hamiltonian's bound branch is active at (x, p)
    there is no data-backed control; returns (None, None) as the fallback
    signal (callers substitute their backup controller).
    """
    if len(ctx.dataset) == 0:
        raise PolicyError("safe_action needs a nonempty dataset")
    x = np.asarray(x, dtype=np.float64)
    grid = ctx.value_field.grid
    if np.any(x < grid.mins) or np.any(x > grid.maxs):
        raise PolicyError(f"state {x.tolist()} outside the value grid")
    p = ctx.gradient_at(x)
    res = evaluate(ctx.hamiltonian, x, p)
    if res.argmax_index is None:
        return None, None
    return ctx.dataset.us[res.argmax_index].copy(), int(res.argmax_index)


def switching_policy(ctx: PolicyContext, target: ScalarField, backup, explore, x):
    """Three-branch safety filter; returns (control, tag).

    backup inside the target, the safe action near the safe-set boundary
    (value below epsilon), exploration elsewhere. Off-grid states are
    treated as value < epsilon so the filter engages at the domain edge;
    the safe action is then evaluated at the clamped state.
    """
    x = np.asarray(x, dtype=np.float64)
    grid = ctx.value_field.grid
    off_grid = bool(np.any(x < grid.mins) or np.any(x > grid.maxs))

    target_val, _ = interpolate(target, x)
    if target_val >= 0:
        return backup(x), "backup"

    if off_grid:
        near_boundary = True
    else:
        value, clamped = ctx.value_at(x)
        near_boundary = clamped or value < ctx.epsilon

    if near_boundary:
        xq = np.clip(x, grid.mins, grid.maxs)
        u, _ = safe_action(ctx, xq)
        if u is None:
            u = backup(x)
        return u, "safe"
    return explore(x), "explore"
