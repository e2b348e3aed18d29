"""Run configuration: one TOML document fully determines a run.

Parsing uses tomllib/tomli; serialization is a minimal writer for the
subset we emit (scalars, lists, nested tables), chosen so that
parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from .data import (
    InputElementwiseLipschitz,
    OutputElementwiseLipschitz,
    SensitivityMatrixLipschitz,
    UniformLipschitz,
    estimate_lipschitz,
    load_dataset,
)
from .expansion import ExpansionConfig
from .grid import make_grid
from .hamiltonian import BoundRefinedHamiltonian, BruteForceHamiltonian, DataDrivenHamiltonian
from .scenarios import polynomial_scenario, tiltrotor_scenario
from .solver import Problem, SolveConfig
from .systems import sampled_velocity_bound

__all__ = ["RunConfig", "ConfigError", "load_config", "dumps_toml", "default_polynomial_config"]


class ConfigError(ValueError):
    pass


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        r = repr(v)
        return r if any(c in r for c in ".einf") else r + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def _emit_table(name: str, table: dict, out: list) -> None:
    scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
    subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
    if name:
        out.append(f"[{name}]")
    for k, v in scalars.items():
        out.append(f"{k} = {_toml_value(v)}")
    for k, v in subtables.items():
        out.append("")
        _emit_table(f"{name}.{k}" if name else k, v, out)


def dumps_toml(doc: dict) -> str:
    out: list = []
    _emit_table("", doc, out)
    return "\n".join(out) + "\n"


@dataclass
class RunConfig:
    """Validated view over the parsed TOML document; builders construct
    the actual objects (scenario, problem, Hamiltonian spec, configs)."""

    doc: dict
    path: str = ""

    def __post_init__(self):
        self._scenario = None
        sys_kind = self.system.get("kind")
        if sys_kind not in ("polynomial", "tiltrotor", "external"):
            raise ConfigError(f"system.kind must be polynomial/tiltrotor/external, got {sys_kind!r}")
        ham = self.doc.get("hamiltonian", {})
        if ham.get("kind", "ddh") in ("brute", "bound_refined", "modular") and sys_kind == "external":
            raise ConfigError(f"hamiltonian.kind={ham.get('kind')} needs an explicit dynamics model "
                              "(system.kind polynomial or tiltrotor)")
        if ham.get("kind", "ddh") == "modular" and sys_kind != "tiltrotor":
            raise ConfigError("the modular Hamiltonian split is defined for the tiltrotor system")

    # -- section accessors ------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    @property
    def workers(self) -> int:
        return int(self.doc.get("workers", 1))

    @property
    def out_dir(self) -> str:
        return self.doc.get("out_dir", "run_out")

    @property
    def system(self) -> dict:
        return self.doc.get("system", {})

    # -- builders ----------------------------------------------------------

    def scenario(self):
        if self._scenario is not None:
            return self._scenario
        kind = self.system["kind"]
        gsec = self.doc.get("grid", {})
        psec = self.doc.get("problem", {})
        if kind == "polynomial":
            counts = gsec.get("counts", [41, 41])
            self._scenario = polynomial_scenario(
                seed=int(self.system.get("seed", self.seed)),
                grid_counts=tuple(counts),
                domain_halfwidth=float(gsec.get("halfwidth", 1.0)),
                unsafe_box=float(psec.get("unsafe_box", 0.8)),
                target_radius=float(psec.get("target_radius", 0.25)),
                certified_lipschitz=self.doc.get("hamiltonian", {}).get("lipschitz", "scenario") == "certified",
            )
        elif kind == "tiltrotor":
            self._scenario = tiltrotor_scenario(grid_counts=tuple(gsec.get("counts", [61, 31, 31])))
        else:
            raise ConfigError("external systems provide data only; no scenario to build")
        return self._scenario

    def grid(self):
        kind = self.system["kind"]
        if kind in ("polynomial", "tiltrotor"):
            return self.scenario().grid
        gsec = self.doc.get("grid", None)
        if gsec is None:
            raise ConfigError("external systems need an explicit [grid] section")
        return make_grid(gsec["mins"], gsec["maxs"], gsec["counts"])

    def dataset(self, default_path=None):
        path = self.doc.get("hamiltonian", {}).get("dataset", default_path)
        if path is None:
            raise ConfigError("the data-driven Hamiltonian needs hamiltonian.dataset (a dataset CSV)")
        return load_dataset(path)

    def lipschitz(self, dataset=None):
        ham = self.doc.get("hamiltonian", {})
        mode = ham.get("lipschitz", "estimate")
        scale = float(ham.get("scale", 1.0))
        if mode == "certified" or mode == "scenario":
            lip = self.scenario().lipschitz
        elif mode == "estimate":
            if dataset is None:
                dataset = self.dataset()
            lip = estimate_lipschitz(
                dataset, ham.get("variant", "matrix"), float(ham.get("control_tolerance", 1e-9))
            )
        elif mode == "explicit":
            variant = ham.get("variant", "matrix")
            values = ham.get("values")
            if values is None:
                raise ConfigError("explicit Lipschitz mode needs hamiltonian.values")
            if variant == "uniform":
                lip = UniformLipschitz(constant=float(values))
            elif variant == "input":
                lip = InputElementwiseLipschitz(vec=np.asarray(values, dtype=float))
            elif variant == "output":
                lip = OutputElementwiseLipschitz(vec=np.asarray(values, dtype=float))
            elif variant == "matrix":
                lip = SensitivityMatrixLipschitz(mat=np.asarray(values, dtype=float))
            else:
                raise ConfigError(f"unknown Lipschitz variant {variant!r}")
        else:
            raise ConfigError(f"hamiltonian.lipschitz must be estimate/certified/explicit, got {mode!r}")
        return lip.scaled(scale) if scale != 1.0 else lip

    def hamiltonian_spec(self, dataset=None, default_dataset_path=None):
        ham = self.doc.get("hamiltonian", {})
        kind = ham.get("kind", "ddh")
        if kind == "brute":
            counts = ham.get("control_grid")
            if counts is None:
                raise ConfigError("brute-force Hamiltonian needs hamiltonian.control_grid")
            return BruteForceHamiltonian(self.scenario().system, tuple(counts))
        if dataset is None:
            dataset = self.dataset(default_dataset_path)
        lip = self.lipschitz(dataset)
        if kind == "ddh":
            return DataDrivenHamiltonian(dataset, lip)
        if kind == "bound_refined":
            sc = self.scenario()
            bound = sampled_velocity_bound(sc.system, sc.grid.mins, sc.grid.maxs)
            return BoundRefinedHamiltonian(DataDrivenHamiltonian(dataset, lip), bound)
        if kind == "modular":
            return self.scenario().modular_hamiltonian(dataset)
        raise ConfigError(f"unknown hamiltonian.kind {kind!r}")

    def problem(self, spec) -> Problem:
        psec = self.doc.get("problem", {})
        kind = psec.get("kind", "reach_avoid")
        sc = self.scenario()
        if kind == "avoid":
            return Problem(kind="avoid", unsafe=sc.unsafe, horizon=float(psec.get("horizon", 1.0)), hamiltonian=spec)
        if kind == "reach_avoid":
            return Problem(
                kind="reach_avoid",
                unsafe=sc.unsafe,
                target=sc.target,
                horizon=float(psec.get("horizon", 1.0)),
                hamiltonian=spec,
            )
        raise ConfigError(f"problem.kind must be avoid/reach_avoid, got {kind!r}")

    def solve_config(self) -> SolveConfig:
        s = self.doc.get("solver", {})
        diss = s.get("dissipation", "auto")
        if not isinstance(diss, str):
            diss = np.asarray(diss, dtype=float)
        return SolveConfig(
            cfl_factor=float(s.get("cfl_factor", 0.5)),
            dissipation=diss,
            store_history=bool(s.get("store_history", False)),
            convergence_tol=float(s.get("convergence_tol", 0.0)),
            tvd_rk2=bool(s.get("tvd_rk2", False)),
            workers=self.workers,
        )

    def expansion_config(self) -> ExpansionConfig:
        e = self.doc.get("expansion", {})
        return ExpansionConfig(
            n_iter=int(e.get("n_iter", 5)),
            n_traj_first=int(e.get("n_traj_first", 50)),
            n_traj=int(e.get("n_traj", 20)),
            rollout_T=float(e.get("rollout_T", 1.0)),
            rollout_dt=float(e.get("rollout_dt", 0.01)),
            epsilon=float(e.get("epsilon", 0.05)),
            boundary_band=float(e.get("boundary_band", 0.1)),
            init_floor=float(e.get("init_floor", 0.0)),
            density_weighting=bool(e.get("density_weighting", True)),
            prune=bool(e.get("prune", True)),
            seed=self.seed,
            horizon=float(e["horizon"]) if "horizon" in e else None,
            cfl_factor=float(e.get("cfl_factor", 0.5)),
            explore_noise=float(e.get("explore_noise", 0.25)),
            workers=self.workers,
        )


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(doc, path=str(path))


def default_polynomial_config(seed: int, out_dir: str = "run_out") -> dict:
    return {
        "seed": seed,
        "workers": 1,
        "out_dir": out_dir,
        "system": {"kind": "polynomial", "seed": seed},
        "grid": {"counts": [41, 41], "halfwidth": 1.0},
        "problem": {"kind": "reach_avoid", "horizon": 1.0, "unsafe_box": 0.8, "target_radius": 0.25},
        "hamiltonian": {"kind": "ddh", "lipschitz": "scenario", "scale": 1.0},
        "collect": {"count": 500},
        "solver": {"cfl_factor": 0.9, "dissipation": "auto", "store_history": False, "convergence_tol": 0.0},
        "expansion": {
            "n_iter": 5,
            "n_traj_first": 10,
            "n_traj": 10,
            "rollout_T": 1.0,
            "rollout_dt": 0.01,
            "epsilon": 0.05,
            "boundary_band": 0.12,
            "init_floor": 0.02,
            "density_weighting": True,
            "prune": False,
            "cfl_factor": 0.9,
        },
    }
