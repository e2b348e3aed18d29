"""Data-driven Hamilton-Jacobi reachability.

Computes guaranteed inner-approximations of safe sets (backward reachable
tubes) for uncertain dynamics directly from trajectory data, via a
data-driven Hamiltonian built from Lipschitz uncertainty sets, and expands
those safe sets through simulated safe experiments.
"""

from .data import (
    Dataset,
    InputElementwiseLipschitz,
    OutputElementwiseLipschitz,
    Sample,
    SensitivityMatrixLipschitz,
    UniformLipschitz,
    estimate_lipschitz,
    load_dataset,
    prune,
    save_dataset,
)
from .grid import (
    Grid,
    ScalarField,
    central_gradient,
    field_from_function,
    interpolate,
    levelset_from_bounds,
    make_grid,
    read_field,
    write_field,
    write_field_csv,
)
from .hamiltonian import (
    BoundRefinedHamiltonian,
    BruteForceHamiltonian,
    DataDrivenHamiltonian,
    HamiltonianPart,
    HamiltonianResult,
    ModularHamiltonian,
    VelocityBound,
    brute_force_hamiltonian,
    ddh,
    ddh_inner_ball,
    ddh_inner_rect,
    evaluate,
    evaluate_grid,
    uncertainty_radius,
    velocity_bound_min,
)
from .solver import (
    NumericalAbort,
    Problem,
    SolveConfig,
    SolveResult,
    auto_dissipation,
    lf_numerical_hamiltonian,
    solve,
    step_avoid,
    step_reach_avoid,
)
from .policy import PolicyContext, safe_action, switching_policy
from .systems import (
    CallableDynamics,
    Dynamics,
    PolynomialSystem,
    TiltrotorParams,
    TiltrotorSystem,
    Trajectory,
    make_polynomial_system,
    polynomial_true_lipschitz,
    rk4_rollout,
    tiltrotor_dynamics,
    tiltrotor_trim,
)
from .expansion import (
    ExpansionConfig,
    ExpansionSetup,
    IterationRecord,
    SafetyViolation,
    expand,
    get_init,
    run_iteration,
)

__version__ = "0.1.0"
