"""Iterative safe set expansion: safe experiments, dataset growth, value
recomputation, and pruning, with full safety logging.

Iteration k samples initial states near the current safe-set boundary,
rolls out the switching safety filter built on the current value function
(at k = 0 the target set and backup controller play that role), appends
the collected samples, re-solves the reach-avoid VI on the grown dataset,
and optionally prunes to the argmax indices the solve actually used.

A safety violation is falsifying evidence (wrong Lipschitz constants or a
bug), so it aborts the run with a forensic dump rather than skipping.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, LipschitzSpec, empty_dataset, prune, save_dataset
from .grid import Grid, ScalarField, interpolate
from .hamiltonian import DataDrivenHamiltonian
from .policy import PolicyContext, switching_policy
from .solver import Problem, SolveConfig, SolveResult, auto_dissipation, solve, write_solve_outputs
from .systems import Dynamics, Trajectory, rk4_rollout, sampled_velocity_bound, write_trajectory_csv

__all__ = [
    "ExpansionConfig",
    "ExpansionSetup",
    "IterationRecord",
    "ExpansionState",
    "SafetyViolation",
    "PreflightError",
    "substream",
    "get_init",
    "run_iteration",
    "expand",
]

# named randomness sub-streams hanging off the one global seed
STREAM_COLLECT = 0
STREAM_INIT = 1
STREAM_EXPLORE = 2


def substream(seed: int, *key) -> np.random.Generator:
    """Deterministic named child stream of the global seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


class ExpansionError(ValueError):
    pass


class PreflightError(ValueError):
    """Target set not invariant under the backup policy, or target
    intersects the unsafe set."""


class SafetyViolation(RuntimeError):
    """A rollout sample entered the unsafe set."""

    def __init__(self, iteration: int, rollout: int, trajectory: Trajectory, margins, values):
        self.iteration = iteration
        self.rollout = rollout
        self.trajectory = trajectory
        self.margins = np.asarray(margins)
        self.values = np.asarray(values)
        super().__init__(
            f"safety violation in iteration {iteration}, rollout {rollout}: "
            f"min unsafe margin {self.margins.min():.6g}"
        )

    def write_forensics(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        write_trajectory_csv(self.trajectory, os.path.join(out_dir, "violation_trajectory.csv"))
        with open(os.path.join(out_dir, "violation.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "iteration": self.iteration,
                    "rollout": self.rollout,
                    "unsafe_margins": self.margins.tolist(),
                    "value_along": self.values.tolist(),
                    "branch_tags": self.trajectory.tags,
                },
                fh,
                indent=1,
            )


@dataclass(frozen=True)
class ExpansionConfig:
    n_iter: int
    n_traj_first: int = 50
    n_traj: int = 20
    rollout_T: float = 1.0
    rollout_dt: float = 0.01
    epsilon: float = 0.05
    boundary_band: float = 0.1
    init_floor: float = 0.0
    density_weighting: bool = True
    prune: bool = True
    seed: int = 0
    horizon: Optional[float] = None  # reach-avoid horizon; defaults to rollout_T
    cfl_factor: float = 0.5
    explore_noise: float = 0.25  # std as a fraction of the control half-width
    workers: int = 1

    def __post_init__(self):
        if self.n_iter < 0 or self.n_traj_first <= 0 or self.n_traj <= 0:
            raise ExpansionError("iteration and rollout counts must be positive")
        if self.boundary_band <= 0:
            raise ExpansionError("boundary_band must be positive")

    @property
    def reach_horizon(self) -> float:
        return self.rollout_T if self.horizon is None else self.horizon


@dataclass
class ExpansionSetup:
    """Problem geometry plus the controllers Algorithm inputs require.

    ``unsafe_fn``/``target_fn`` are optional analytic margin functions
    (x -> signed margin); when absent, the sampled fields are interpolated
    (clamped off-grid queries count as violations for the unsafe check)."""

    grid: Grid
    target: ScalarField
    unsafe: ScalarField
    dynamics: Dynamics
    lipschitz: LipschitzSpec
    backup: object
    unsafe_fn: Optional[object] = None
    target_fn: Optional[object] = None

    def unsafe_margin(self, x) -> float:
        if self.unsafe_fn is not None:
            return float(self.unsafe_fn(x))
        value, clamped = interpolate(self.unsafe, x)
        return -abs(value) if clamped else float(value)

    def target_margin(self, x) -> float:
        if self.target_fn is not None:
            return float(self.target_fn(x))
        return float(interpolate(self.target, x)[0])


@dataclass
class IterationRecord:
    iteration: int
    dataset_before: int
    dataset_after: int
    pruned_size: int
    safe_volume_fraction: float
    min_unsafe_margin: float
    branch_counts: dict
    wall_time_s: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExpansionState:
    k: int
    dataset: Dataset
    value: Optional[SolveResult]  # None before the first solve
    value_field: ScalarField  # target field at k = 0
    alpha: Optional[np.ndarray] = None  # fixed for the whole run
    records: list = field(default_factory=list)


def get_init(
    value_field: ScalarField,
    target: ScalarField,
    data: Dataset,
    n: int,
    band: float,
    weighted: bool,
    rng: np.random.Generator,
    floor: float = 0.0,
) -> np.ndarray:
    """Initial states for the next experiments: grid points in the
    boundary band {floor < V < floor + band, target < 0}, falling back to
    the whole safe set {V > 0} when the band is empty (k = 0: the target
    set interior).

    The lower end is strictly positive: V = 0 points can coincide with
    the closed unsafe set's boundary (V >= 0 implies margin >= V, so a
    positive floor buys the discrete-time filter the same margin). With
    weighting on, selection probability is proportional to the distance
    to the nearest dataset state, favoring regions with less data.
    Sampling is without replacement unless the band is smaller than n.
    """
    V = value_field.flat
    L = target.flat
    cand = np.flatnonzero((V > floor) & (V < floor + band) & (L < 0))
    if cand.size == 0:
        cand = np.flatnonzero(V > floor)
    if cand.size == 0:
        cand = np.flatnonzero(V > 0)
    if cand.size == 0:
        raise ExpansionError("empty safe set: no grid point has V > 0")
    pts = value_field.grid.all_points()[cand]

    probs = None
    if weighted and len(data) > 0:
        d2 = np.full(pts.shape[0], np.inf)
        for i in range(len(data)):
            diff = pts - data.xs[i]
            d2 = np.minimum(d2, np.sum(diff * diff, axis=1))
        dist = np.sqrt(d2)
        if dist.max() > 0:
            # tiny floor so cells that coincide with dataset states stay
            # selectable when the band is barely larger than n
            dist = dist + 1e-12 * dist.max()
            probs = dist / dist.sum()
    replace = cand.size < n
    chosen = rng.choice(pts.shape[0], size=n, replace=replace, p=probs)
    return pts[chosen]


def _gaussian_explore(dyn: Dynamics, rng: np.random.Generator, noise_frac: float):
    """Exploration policy: a mean drawn uniformly in the control box once
    per rollout, Gaussian per-step noise with std = noise_frac * half
    width, clamped to the box."""
    lo, hi = dyn.control_lo, dyn.control_hi
    mean = rng.uniform(lo, hi)
    std = noise_frac * 0.5 * (hi - lo)

    def policy(_x):
        return np.clip(mean + rng.normal(0.0, 1.0, size=len(lo)) * std, lo, hi)

    return policy


def _k0_policy(setup: ExpansionSetup) -> object:
    """Algorithm start-up: the safe set is the target set, the value
    function is the target margin itself, and the safe branch is the
    backup controller. The explore branch can never fire (it would need
    margin < 0 and margin >= epsilon > 0)."""

    def policy(x):
        margin = setup.target_margin(x)
        if margin >= 0:
            return setup.backup(x), "backup"
        return setup.backup(x), "safe"

    return policy


def run_iteration(state: ExpansionState, setup: ExpansionSetup, config: ExpansionConfig):
    """One Algorithm iteration: sample, roll out, grow, solve, prune."""
    t0 = time.perf_counter()
    k = state.k
    n_traj = config.n_traj_first if k == 0 else config.n_traj
    rng_init = substream(config.seed, STREAM_INIT, k)
    inits = get_init(
        state.value_field,
        setup.target,
        state.dataset,
        n_traj,
        config.boundary_band,
        config.density_weighting,
        rng_init,
        floor=config.init_floor,
    )

    ctx = None
    if state.value is not None:
        ctx = PolicyContext(
            value_field=state.value.final_value,
            dataset=state.dataset,
            lipschitz=setup.lipschitz,
            horizon=config.reach_horizon,
            epsilon=config.epsilon,
        )

    def run_one(j: int) -> Trajectory:
        rng_explore = substream(config.seed, STREAM_EXPLORE, k, j)
        explore = _gaussian_explore(setup.dynamics, rng_explore, config.explore_noise)
        if ctx is None:
            policy = _k0_policy(setup)
        else:
            policy = lambda x: switching_policy(ctx, setup.target, setup.backup, explore, x)  # noqa: E731
        return rk4_rollout(setup.dynamics, policy, inits[j], config.rollout_T, config.rollout_dt)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            trajectories = list(pool.map(run_one, range(n_traj)))
    else:
        trajectories = [run_one(j) for j in range(n_traj)]

    # Safety audit before anything else: any unsafe sample falsifies the
    # pipeline and must surface with forensics.
    min_margin = np.inf
    branch_counts: dict = {}
    for j, traj in enumerate(trajectories):
        margins = np.array([setup.unsafe_margin(x) for x in traj.xs])
        min_margin = min(min_margin, float(margins.min()))
        for tag in traj.tags:
            branch_counts[tag] = branch_counts.get(tag, 0) + 1
        if traj.diverged or np.any(margins <= 0):
            values = (
                np.array([interpolate(state.value_field, np.clip(x, setup.grid.mins, setup.grid.maxs))[0] for x in traj.xs])
            )
            raise SafetyViolation(k, j, traj, margins, values)

    before = len(state.dataset)
    xs = np.concatenate([t.xs for t in trajectories])
    us = np.concatenate([t.us for t in trajectories])
    vs = np.concatenate([t.vs for t in trajectories])
    grown = state.dataset.extend(xs, us, vs)

    # Dissipation is fixed on the first solve and reused for the whole
    # run: re-deriving it from the growing dataset would change the
    # scheme between iterations and break value monotonicity.
    if state.alpha is None:
        dyn_bound = sampled_velocity_bound(setup.dynamics, setup.grid.mins, setup.grid.maxs)
        phys = np.maximum(np.abs(dyn_bound.lo), np.abs(dyn_bound.hi))
        auto = auto_dissipation(DataDrivenHamiltonian(grown, setup.lipschitz), setup.grid)
        state.alpha = np.maximum(phys, auto)

    problem = Problem(
        kind="reach_avoid",
        unsafe=setup.unsafe,
        target=setup.target,
        horizon=config.reach_horizon,
        hamiltonian=DataDrivenHamiltonian(grown, setup.lipschitz),
    )
    result = solve(
        problem,
        SolveConfig(cfl_factor=config.cfl_factor, dissipation=state.alpha, workers=config.workers),
    )

    prune_map = None
    carried = grown
    if config.prune:
        carried, prune_map = prune(grown, result.used_indices)

    record = IterationRecord(
        iteration=k,
        dataset_before=before,
        dataset_after=len(grown),
        pruned_size=len(carried),
        safe_volume_fraction=float(np.mean(result.final_value.flat >= 0)),
        min_unsafe_margin=float(min_margin),
        branch_counts=branch_counts,
        wall_time_s=time.perf_counter() - t0,
    )
    new_state = ExpansionState(
        k=k + 1,
        dataset=carried,
        value=result,
        value_field=result.final_value,
        alpha=state.alpha,
        records=state.records + [record],
    )
    return new_state, record, trajectories, prune_map


def _preflight(setup: ExpansionSetup, config: ExpansionConfig) -> None:
    tgt = setup.target.flat
    uns = setup.unsafe.flat
    if np.any((tgt >= 0) & (uns <= 0)):
        raise PreflightError("target set intersects the unsafe set on the grid")
    inside = np.flatnonzero(tgt >= 0)
    if inside.size == 0:
        raise PreflightError("target set contains no grid point")
    stride = max(1, inside.size // 64)
    margin = float(np.max(setup.grid.spacing))
    pts = setup.grid.all_points()[inside[::stride]]
    for x0 in pts:
        traj = rk4_rollout(setup.dynamics, lambda x: setup.backup(x), x0, config.rollout_T, config.rollout_dt)
        worst = min(setup.target_margin(x) for x in traj.xs)
        if traj.diverged or worst < -margin:
            raise PreflightError(
                f"target not invariant under backup: rollout from {x0.tolist()} "
                f"reaches target margin {worst:.6g} (allowed -{margin:.6g})"
            )


def expand(setup: ExpansionSetup, config: ExpansionConfig, out_dir: Optional[str] = None):
    """Run the full expansion; returns (final SolveResult or None,
    records). Writes per-iteration exports when ``out_dir`` is given."""
    _preflight(setup, config)
    state = ExpansionState(k=0, dataset=empty_dataset(setup.dynamics.n_x, setup.dynamics.n_u), value=None, value_field=setup.target)
    records = []
    for _ in range(config.n_iter):
        state, record, trajectories, prune_map = run_iteration(state, setup, config)
        records.append(record)
        if out_dir is not None:
            it_dir = os.path.join(out_dir, f"iter_{record.iteration:03d}")
            os.makedirs(it_dir, exist_ok=True)
            write_solve_outputs(state.value, it_dir, basename="value", kind="reach_avoid", cfl_factor=config.cfl_factor)
            save_dataset(state.dataset, os.path.join(it_dir, "dataset.csv"))
            for j, traj in enumerate(trajectories):
                write_trajectory_csv(traj, os.path.join(it_dir, f"traj_{j:03d}.csv"))
            with open(os.path.join(it_dir, "record.json"), "w", encoding="utf-8") as fh:
                json.dump(record.to_json(), fh, indent=1)
                fh.write("\n")
            if prune_map is not None:
                with open(os.path.join(it_dir, "prune_map.json"), "w", encoding="utf-8") as fh:
                    json.dump({"map": [[int(a), int(b)] for a, b in sorted(prune_map.items())]}, fh)
                    fh.write("\n")
    return state.value, records
