"""Command-line front end.

One TOML config fully determines a run; all randomness flows from the
global seed through named sub-streams, so every command is idempotent:
same config + seed, bit-identical outputs.

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 safety
violation.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import kernels
from .config import ConfigError, RunConfig, default_polynomial_config, dumps_toml, load_config
from .data import DatasetError, Dataset, save_dataset
from .expansion import STREAM_COLLECT, PreflightError, SafetyViolation, expand, substream
from .grid import GridError, read_field
from .policy import PolicyContext, safe_action
from .solver import NumericalAbort, solve, write_solve_outputs
from .systems import _MONOMIAL_NAMES, make_polynomial_system, rk4_rollout, write_trajectory_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_SAFETY = 4

STREAM_EVAL = 3


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out is not None:
        cfg.doc["out_dir"] = args.out
    if args.seed is not None:
        cfg.doc["seed"] = args.seed
    if args.workers is not None:
        cfg.doc["workers"] = args.workers
    return cfg


def cmd_gen_system(args) -> int:
    """Write the coefficient dump and a default run config for a seeded
    polynomial benchmark."""
    os.makedirs(args.out, exist_ok=True)
    system = make_polynomial_system(args.seed)
    mult_names = ("const", "x1", "x2")
    with open(os.path.join(args.out, "coefficients.csv"), "w", encoding="utf-8") as fh:
        fh.write("output,multiplier,monomial,value\n")
        for i in range(2):
            for m in range(3):
                for k in range(6):
                    fh.write(f"{i + 1},{mult_names[m]},{_MONOMIAL_NAMES[k]},{system.coeffs[i, m, k]:.17g}\n")
    with open(os.path.join(args.out, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(dumps_toml(default_polynomial_config(args.seed, args.out)))
    print(f"wrote {args.out}/coefficients.csv and {args.out}/config.toml")
    return EXIT_OK


def cmd_collect(args) -> int:
    """Uniform sampling over the state domain and control box, recording
    exact velocities."""
    cfg = _apply_overrides(load_config(args.config), args)
    sc = cfg.scenario()
    count = int(cfg.doc.get("collect", {}).get("count", 500))
    rng = substream(cfg.seed, STREAM_COLLECT)
    dyn = sc.system
    xs = rng.uniform(sc.grid.mins, sc.grid.maxs, size=(count, sc.grid.dims))
    us = rng.uniform(dyn.control_lo, dyn.control_hi, size=(count, dyn.n_u))
    vs = np.stack([dyn.f(xs[i], us[i]) for i in range(count)])
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "dataset.csv")
    save_dataset(Dataset(xs, us, vs), path)
    print(f"wrote {count} samples to {path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    kernels.set_workers(cfg.workers)
    default_ds = os.path.join(cfg.out_dir, "dataset.csv")
    spec = cfg.hamiltonian_spec(default_dataset_path=default_ds if os.path.exists(default_ds) else None)
    problem = cfg.problem(spec)
    result = solve(problem, cfg.solve_config())
    write_solve_outputs(
        result, cfg.out_dir, basename="value", kind=problem.kind, cfl_factor=cfg.solve_config().cfl_factor
    )
    print(
        f"solved {problem.kind} to horizon {problem.horizon} in {result.steps_taken} steps; "
        f"safe fraction {float(np.mean(result.final_value.flat >= 0)):.4f}; "
        f"used {len(result.used_indices)} data indices -> {cfg.out_dir}/value.field"
    )
    return EXIT_OK


def cmd_expand(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    kernels.set_workers(cfg.workers)
    sc = cfg.scenario()
    setup = sc.setup
    econf = cfg.expansion_config()
    try:
        result, records = expand(setup, econf, out_dir=cfg.out_dir)
    except SafetyViolation as exc:
        exc.write_forensics(os.path.join(cfg.out_dir, "forensics"))
        print(f"SAFETY VIOLATION: {exc} (forensics in {cfg.out_dir}/forensics)", file=sys.stderr)
        return EXIT_SAFETY
    for rec in records:
        print(
            f"iter {rec.iteration}: volume {rec.safe_volume_fraction:.4f}, "
            f"data {rec.dataset_before}->{rec.dataset_after} (kept {rec.pruned_size}), "
            f"min margin {rec.min_unsafe_margin:.4f}, {rec.wall_time_s:.1f}s"
        )
    return EXIT_OK


def cmd_eval_policy(args) -> int:
    """Roll out the safe policy from states sampled strictly inside the
    computed safe set; export tagged trajectories."""
    from scipy.ndimage import minimum_filter

    cfg = _apply_overrides(load_config(args.config), args)
    sc = cfg.scenario()
    ev = cfg.doc.get("eval", {})
    value_path = ev.get("value", os.path.join(cfg.out_dir, "value.field"))
    dataset_path = ev.get("dataset", os.path.join(cfg.out_dir, "dataset.csv"))
    value = read_field(value_path)
    dataset = cfg.dataset(dataset_path)
    lip = cfg.lipschitz(dataset)
    horizon = float(cfg.doc.get("problem", {}).get("horizon", 1.0))
    ctx = PolicyContext(value_field=value, dataset=dataset, lipschitz=lip, horizon=horizon)

    # one cell inside the zero superlevel set
    eroded = minimum_filter(value.values, size=3, mode="nearest")
    inside = np.flatnonzero(eroded.reshape(-1) >= 0)
    if inside.size == 0:
        raise ConfigError("no state lies one cell inside the safe set")
    rng = substream(cfg.seed, STREAM_EVAL)
    count = int(ev.get("count", 10))
    chosen = rng.choice(inside.size, size=min(count, inside.size), replace=False)
    pts = value.grid.all_points()[inside[chosen]]

    def policy(x):
        u, _idx = safe_action(ctx, np.clip(x, value.grid.mins, value.grid.maxs))
        return u, "safe"

    os.makedirs(cfg.out_dir, exist_ok=True)
    T = float(ev.get("T", horizon))
    dt = float(ev.get("dt", 0.01))
    for j, x0 in enumerate(pts):
        traj = rk4_rollout(sc.system, policy, x0, T, dt)
        write_trajectory_csv(traj, os.path.join(cfg.out_dir, f"eval_traj_{j:03d}.csv"))
    print(f"wrote {len(pts)} safe-policy trajectories to {cfg.out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    """Exit 0 when field A <= field B + tol pointwise (containment audit)."""
    a = read_field(args.field_a)
    b = read_field(args.field_b)
    if a.grid != b.grid:
        raise ConfigError("fields live on different grids")
    gap = float(np.max(a.values - b.values))
    ok = gap <= args.tol
    print(f"max(A - B) = {gap:.3e} ({'<=' if ok else '>'} tol {args.tol:.3e})")
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddhreach", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run config TOML")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--seed", type=int, default=None, help="override global seed")
        p.add_argument("--workers", type=int, default=None, help="solver/rollout worker count")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("gen-system", help="write a seeded polynomial benchmark (coefficients + config)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_system)

    for name, fn in (
        ("collect", cmd_collect),
        ("solve", cmd_solve),
        ("expand", cmd_expand),
        ("eval-policy", cmd_eval_policy),
    ):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("compare", help="check pointwise containment of two exported fields")
    p.add_argument("field_a")
    p.add_argument("field_b")
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, GridError, DatasetError, PreflightError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SafetyViolation as exc:
        print(f"safety violation: {exc}", file=sys.stderr)
        return EXIT_SAFETY


if __name__ == "__main__":
    sys.exit(main())
