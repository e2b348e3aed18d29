"""Ready-made benchmark scenarios: the random polynomial system and the
surrogate tiltrotor transition problem.

These assemble grids, level-set margins, Lipschitz knowledge, backup
controllers, and expansion setups in one place so the CLI and the test
suite run the same configurations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import SensitivityMatrixLipschitz
from .expansion import ExpansionSetup
from .grid import Grid, ScalarField, field_from_function, make_grid
from .hamiltonian import (
    BruteForceHamiltonian,
    DataDrivenHamiltonian,
    HamiltonianPart,
    ModularHamiltonian,
    control_points,
)
from .systems import (
    CallableDynamics,
    PolynomialSystem,
    TiltrotorParams,
    TiltrotorSystem,
    make_polynomial_system,
    polynomial_true_lipschitz,
    sampled_sensitivity_bound,
)

__all__ = [
    "PolynomialScenario",
    "polynomial_scenario",
    "TiltrotorScenario",
    "tiltrotor_scenario",
]


# --------------------------------------------------------------------------
# polynomial benchmark: domain [-1,1]^2, unsafe outside a centered box,
# disk target (a disk is invariant under the energy-decreasing backup,
# which a box is not)
# --------------------------------------------------------------------------


@dataclass
class PolynomialScenario:
    system: PolynomialSystem
    grid: Grid
    unsafe: ScalarField
    target: ScalarField
    lipschitz: SensitivityMatrixLipschitz
    setup: ExpansionSetup
    unsafe_box: float
    target_radius: float


def _polynomial_backup(system: PolynomialSystem, counts=(9, 9)):
    """Pick the control that pushes hardest toward the origin; keeps the
    disk target invariant whenever some control points inward (checked by
    the expansion preflight)."""
    U = control_points(system.control_lo, system.control_hi, counts)

    def backup(x):
        best_u = U[0]
        best = -np.inf
        for u in U:
            v = system.f(x, u)
            score = -(x[0] * v[0] + x[1] * v[1])
            if score > best:
                best = score
                best_u = u
        return np.asarray(best_u, dtype=np.float64)

    return backup


def polynomial_scenario(
    seed: int,
    grid_counts=(41, 41),
    domain_halfwidth: float = 1.0,
    unsafe_box: float = 0.8,
    target_radius: float = 0.25,
    certified_lipschitz: bool = False,
) -> PolynomialScenario:
    system = make_polynomial_system(seed)
    d = domain_halfwidth
    grid = make_grid([-d, -d], [d, d], grid_counts)

    def unsafe_fn(X):
        X = np.atleast_2d(X)
        margins = np.stack(
            [X[:, 0] + unsafe_box, unsafe_box - X[:, 0], X[:, 1] + unsafe_box, unsafe_box - X[:, 1]]
        )
        return np.min(margins, axis=0)

    def target_fn(X):
        X = np.atleast_2d(X)
        return target_radius - np.sqrt(X[:, 0] ** 2 + X[:, 1] ** 2)

    unsafe = field_from_function(grid, unsafe_fn)
    target = field_from_function(grid, target_fn)
    estimate, certified = polynomial_true_lipschitz(system)
    lip = certified if certified_lipschitz else estimate
    setup = ExpansionSetup(
        grid=grid,
        target=target,
        unsafe=unsafe,
        dynamics=system,
        lipschitz=lip,
        backup=_polynomial_backup(system),
        unsafe_fn=lambda x: float(unsafe_fn(x)[0]),
        target_fn=lambda x: float(target_fn(x)[0]),
    )
    return PolynomialScenario(
        system=system,
        grid=grid,
        unsafe=unsafe,
        target=target,
        lipschitz=lip,
        setup=setup,
        unsafe_box=unsafe_box,
        target_radius=target_radius,
    )


# --------------------------------------------------------------------------
# tiltrotor transition benchmark (surrogate aero; near-hover portion of
# the corridor where the control box admits trim)
# --------------------------------------------------------------------------

DEG = math.pi / 180.0
# flight-path-angle and tilt margins are scaled into airspeed-comparable
# units so the min() over mixed constraints is meaningful
ANGLE_SCALE = 20.0


@dataclass
class TiltrotorScenario:
    system: TiltrotorSystem
    grid: Grid
    unsafe: ScalarField
    target: ScalarField
    lipschitz: SensitivityMatrixLipschitz
    setup: ExpansionSetup
    tilt_only: CallableDynamics

    def plain_hamiltonian(self, dataset) -> DataDrivenHamiltonian:
        return DataDrivenHamiltonian(dataset, self.lipschitz)

    def modular_hamiltonian(self, dataset) -> ModularHamiltonian:
        """Known tilt channel (beta_dot = delta) as an exact part, the
        uncertain airspeed/flight-path block as a DDH part."""
        return ModularHamiltonian(
            parts=(
                HamiltonianPart(
                    state_indices=(0, 1),
                    costate_indices=(0, 1),
                    spec=DataDrivenHamiltonian(dataset, self.lipschitz),
                ),
                HamiltonianPart(
                    state_indices=(2,),
                    costate_indices=(2,),
                    spec=BruteForceHamiltonian(self.tilt_only, (2,)),
                ),
            )
        )


def _vmin_of_beta(beta):
    """Airspeed floor varying with tilt: 5 m/s near hover (90 deg) up to
    50 m/s in cruise (0 deg)."""
    return 50.0 - 45.0 * np.clip(beta / (90.0 * DEG), 0.0, 1.0)


def _tiltrotor_backup(params: TiltrotorParams, v_ref: float, beta_ref: float):
    """Proportional recovery toward the trim corridor: thrust balances the
    vertical channel toward a commanded flight-path-angle rate, angle of
    attack tilts the thrust to track the airspeed reference, tilt rate
    homes beta. Model-based, standing in for the LQR trim-schedule backup
    a flight-test program would carry."""
    from .systems import _lift_drag  # surrogate aero shared with dynamics

    def backup(x):
        v, gamma, beta = float(x[0]), float(x[1]), float(x[2])
        delta = float(np.clip(1.0 * (beta_ref - beta), -params.delta_max, params.delta_max))
        gdot_des = -2.0 * gamma
        vdot_des = float(np.clip(-1.0 * (v - v_ref), -2.0, 2.0))
        alpha = 0.0
        T = params.m * params.g
        for _ in range(2):
            lift, drag = _lift_drag(params, v, alpha, beta)
            t_sin = params.m * (v * gdot_des + params.g * math.cos(gamma)) - lift
            t_cos = params.m * (vdot_des + params.g * math.sin(gamma)) + drag
            T = float(np.clip(math.hypot(t_sin, t_cos), 0.0, params.T_max))
            s = math.atan2(t_sin, t_cos)
            alpha = float(np.clip(s - beta, params.alpha_min, params.alpha_max))
        return np.array([T, alpha, delta])

    return backup


def tiltrotor_scenario(
    grid_counts=(61, 31, 31),
    params: TiltrotorParams | None = None,
) -> TiltrotorScenario:
    params = params or TiltrotorParams()
    system = TiltrotorSystem(params)
    mins = np.array([4.0, -20.0 * DEG, 70.0 * DEG])
    maxs = np.array([30.0, 20.0 * DEG, 90.0 * DEG])
    grid = make_grid(mins, maxs, grid_counts)

    gamma_lim = 15.0 * DEG

    def unsafe_fn(X):
        X = np.atleast_2d(X)
        v, gamma, beta = X[:, 0], X[:, 1], X[:, 2]
        margins = np.stack(
            [
                ANGLE_SCALE * (gamma + gamma_lim),
                ANGLE_SCALE * (gamma_lim - gamma),
                v - _vmin_of_beta(beta),
            ]
        )
        return np.min(margins, axis=0)

    tgt_v = (11.0, 16.0)
    tgt_gamma = 3.0 * DEG
    tgt_beta = (80.0 * DEG, 87.0 * DEG)

    def target_fn(X):
        X = np.atleast_2d(X)
        v, gamma, beta = X[:, 0], X[:, 1], X[:, 2]
        margins = np.stack(
            [
                v - tgt_v[0],
                tgt_v[1] - v,
                ANGLE_SCALE * (tgt_gamma - gamma),
                ANGLE_SCALE * (gamma + tgt_gamma),
                ANGLE_SCALE * (beta - tgt_beta[0]),
                ANGLE_SCALE * (tgt_beta[1] - beta),
            ]
        )
        return np.min(margins, axis=0)

    unsafe = field_from_function(grid, unsafe_fn)
    target = field_from_function(grid, target_fn)

    # Prior-knowledge sensitivity matrix for the uncertain (v, gamma)
    # subsystem, sampled densely from the surrogate; the tilt channel
    # beta_dot = delta is treated as known via the modular split.
    lip = sampled_sensitivity_bound(system, mins, maxs, per_axis=9, control_per_axis=5)

    backup = _tiltrotor_backup(params, v_ref=13.5, beta_ref=83.5 * DEG)
    setup = ExpansionSetup(
        grid=grid,
        target=target,
        unsafe=unsafe,
        dynamics=system,
        lipschitz=lip,
        backup=backup,
        unsafe_fn=lambda x: float(unsafe_fn(x)[0]),
        target_fn=lambda x: float(target_fn(x)[0]),
    )

    tilt_only = CallableDynamics(
        n_x=3,
        n_u=1,
        control_lo=[-params.delta_max],
        control_hi=[params.delta_max],
        fn=lambda x, u: np.array([0.0, 0.0, u[0]]),
        fn_batch=lambda X, u: np.stack(
            [np.zeros(len(X)), np.zeros(len(X)), np.full(len(X), u[0])], axis=-1
        ),
    )

    return TiltrotorScenario(
        system=system,
        grid=grid,
        unsafe=unsafe,
        target=target,
        lipschitz=lip,
        setup=setup,
        tilt_only=tilt_only,
    )
