import numpy as np
import pytest

from ddhreach.data import Dataset, UniformLipschitz, prune
from ddhreach.grid import ScalarField, field_from_function, levelset_from_bounds, make_grid
from ddhreach.hamiltonian import (
    BoundRefinedHamiltonian,
    BruteForceHamiltonian,
    DataDrivenHamiltonian,
    HamiltonianPart,
    ModularHamiltonian,
    VelocityBound,
    evaluate,
)
from ddhreach.solver import (
    NumericalAbort,
    Problem,
    SolveConfig,
    SolverError,
    auto_dissipation,
    lf_numerical_hamiltonian,
    solve,
    step_avoid,
    step_reach_avoid,
    write_solve_outputs,
)
from ddhreach.systems import CallableDynamics


def drift_problem(n_points=201, horizon=0.5):
    """1D constant drift xdot = -1 via a single-sample DDH with zero
    Lipschitz constant; unsafe margin g(x) = x on [0, 2]."""
    grid = make_grid([0.0], [2.0], [n_points])
    g = ScalarField(grid, grid.coords[0].copy())
    data = Dataset([[1.0]], [[0.0]], [[-1.0]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    return Problem(kind="avoid", unsafe=g, horizon=horizon, hamiltonian=spec)


def unit_integrator():
    return CallableDynamics(
        n_x=1, n_u=1, control_lo=[-1.0], control_hi=[1.0], fn=lambda x, u: np.array([u[0]]),
        fn_batch=lambda X, u: np.full((len(X), 1), u[0]),
    )


# -- dissipation bounds -----------------------------------------------------


def test_auto_dissipation_ddh_ball():
    # one sample v=(1,-2), uniform L=1, farthest domain point at distance 2
    side = 2.0 / np.sqrt(2.0)
    grid = make_grid([0.0, 0.0], [side, side], [5, 5])
    data = Dataset([[0.0, 0.0]], [[0.0]], [[1.0, -2.0]])
    alpha = auto_dissipation(DataDrivenHamiltonian(data, UniformLipschitz(constant=1.0)), grid)
    assert np.allclose(alpha, [3.0, 4.0])


def test_auto_dissipation_brute_force():
    grid = make_grid([-1.0], [1.0], [11])
    alpha = auto_dissipation(BruteForceHamiltonian(unit_integrator(), (5,)), grid)
    assert alpha[0] == pytest.approx(1.2)


def test_auto_dissipation_modular_sums_parts():
    grid = make_grid([-1.0, -1.0], [1.0, 1.0], [5, 5])
    data = Dataset([[0.0, 0.0]], [[0.0]], [[1.0, 0.5]])
    lip = UniformLipschitz(constant=0.0)
    part_spec = DataDrivenHamiltonian(data, lip)
    spec = ModularHamiltonian(
        parts=(HamiltonianPart((0,), (0,), part_spec), HamiltonianPart((1,), (1,), part_spec))
    )
    alpha = auto_dissipation(spec, grid)
    assert np.allclose(alpha, [1.0, 0.5])


def test_auto_dissipation_bound_refined():
    grid = make_grid([-1.0], [1.0], [5])
    data = Dataset([[0.0]], [[0.0]], [[0.5]])
    spec = BoundRefinedHamiltonian(
        inner=DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0)),
        bound=VelocityBound(lo=[-3.0], hi=[2.0]),
    )
    assert auto_dissipation(spec, grid)[0] == pytest.approx(3.0)


# -- LF numerical Hamiltonian -----------------------------------------------


def test_lf_smooth_region_reduces_to_evaluate():
    data = Dataset([[0.0, 0.0]], [[0.0]], [[1.0, -1.0]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.5))
    p = np.array([0.7, -0.3])
    want = evaluate(spec, [0.1, 0.2], p).value
    got = lf_numerical_hamiltonian(spec, [0.1, 0.2], p, p, [2.0, 2.0])
    assert got == pytest.approx(want)


def test_lf_zero_alpha_is_central():
    data = Dataset([[0.0]], [[0.0]], [[2.0]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    got = lf_numerical_hamiltonian(spec, [0.0], [-1.0], [1.0], [0.0])
    assert got == pytest.approx(evaluate(spec, [0.0], [0.0]).value)


def test_lf_abs_hamiltonian_example():
    # H(p) = |p| via the unit integrator; p- = -1, p+ = 1, alpha = 1
    spec = BruteForceHamiltonian(unit_integrator(), (3,))
    got = lf_numerical_hamiltonian(spec, [0.0], [-1.0], [1.0], [1.0])
    assert got == pytest.approx(-1.0)  # H(0) - 0.5 * 1 * 2


# -- single steps -------------------------------------------------------------


def test_step_avoid_zero_dynamics_stationary():
    grid = make_grid([0.0], [1.0], [11])
    g = ScalarField(grid, grid.coords[0] - 0.3)
    data = Dataset([[0.5]], [[0.0]], [[0.0]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    V1, used = step_avoid(g, g, spec, [1.0], 0.01)
    # stationary up to last-ulp slop in the one-sided differences of a
    # floating-point linspace
    assert np.allclose(V1.values, g.values, atol=1e-15)
    assert used == {0}


def test_step_avoid_vi_freezes_at_unsafe():
    grid = make_grid([0.0], [1.0], [11])
    g = ScalarField(grid, grid.coords[0] - 0.5)
    V = ScalarField(grid, np.full(11, 2.0))  # everywhere above g
    data = Dataset([[0.5]], [[0.0]], [[0.0]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    V1, _ = step_avoid(V, g, spec, [1.0], 0.01)
    assert np.array_equal(V1.values, g.values)  # min branch takes over


def test_step_cfl_violation():
    grid = make_grid([0.0], [1.0], [11])
    g = ScalarField(grid, grid.coords[0])
    data = Dataset([[0.5]], [[0.0]], [[1.0]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    with pytest.raises(SolverError, match="CFL"):
        step_avoid(g, g, spec, [1.0], dt=1.0)


def test_step_reach_avoid_degenerate_sets():
    grid = make_grid([0.0], [1.0], [11])
    g = ScalarField(grid, grid.coords[0] - 0.4)
    data = Dataset([[0.5]], [[0.0]], [[0.7]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    V0 = ScalarField(grid, np.minimum(g.values, g.values))
    V1, _ = step_reach_avoid(V0, g, g, spec, [1.0], 0.01)
    assert np.array_equal(V1.values, g.values)  # l = g collapses to g


def test_step_reach_avoid_rises_to_target():
    grid = make_grid([0.0], [1.0], [11])
    big = ScalarField(grid, np.full(11, 5.0))  # target covers the domain
    V = ScalarField(grid, np.zeros(11))
    data = Dataset([[0.5]], [[0.0]], [[0.0]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    V1, _ = step_reach_avoid(V, big, big, spec, [1.0], 0.01)
    assert np.array_equal(V1.values, big.values)


# -- full solves --------------------------------------------------------------


def test_solve_zero_horizon_returns_terminal():
    prob = drift_problem(horizon=0.0)
    res = solve(prob)
    assert np.array_equal(res.final_value.values, prob.unsafe.values)
    assert res.used_indices == set()
    assert res.steps_taken == 0


def test_solve_drift_analytic():
    prob = drift_problem(n_points=201, horizon=0.5)
    res = solve(prob, SolveConfig(cfl_factor=0.5))
    exact = prob.grid.coords[0] - 0.5
    dx = prob.grid.spacing[0]
    assert np.max(np.abs(res.final_value.values - exact)) <= 2 * dx


def test_solve_avoid_monotone_in_horizon():
    prob = drift_problem(n_points=101, horizon=0.4)
    res = solve(prob, SolveConfig(store_history=True))
    times = [t for t, _ in res.history]
    assert times[0] == 0.0 and times[-1] == pytest.approx(0.4)
    assert all(b > a for a, b in zip(times, times[1:]))
    for (_, f1), (_, f2) in zip(res.history, res.history[1:]):
        assert np.max(f2.values - f1.values) <= 1e-9  # longer horizon, smaller min


def test_solve_reach_avoid_monotone_in_horizon():
    grid = make_grid([-2.0], [2.0], [81])
    target = levelset_from_bounds(grid, [(0, -0.2, 0.2)])
    unsafe = levelset_from_bounds(grid, [])
    spec = BruteForceHamiltonian(unit_integrator(), (3,))
    prob = Problem(kind="reach_avoid", unsafe=unsafe, target=target, horizon=0.5, hamiltonian=spec)
    res = solve(prob, SolveConfig(store_history=True))
    for (_, f1), (_, f2) in zip(res.history, res.history[1:]):
        assert np.min(f2.values - f1.values) >= -1e-9


def test_solve_reach_set_of_unit_integrator():
    # target [-0.2, 0.2], speed 1, horizon 1: reach set converges to
    # [-1.2, 1.2] within one cell
    grid = make_grid([-2.0], [2.0], [201])
    target = levelset_from_bounds(grid, [(0, -0.2, 0.2)])
    unsafe = levelset_from_bounds(grid, [])
    spec = BruteForceHamiltonian(unit_integrator(), (3,))
    prob = Problem(kind="reach_avoid", unsafe=unsafe, target=target, horizon=1.0, hamiltonian=spec)
    res = solve(prob, SolveConfig(cfl_factor=0.9))
    xs = grid.coords[0]
    safe = xs[res.final_value.values >= 0]
    dx = grid.spacing[0]
    assert safe.min() == pytest.approx(-1.2, abs=dx + 1e-9)
    assert safe.max() == pytest.approx(1.2, abs=dx + 1e-9)


def test_solve_comparison_principle_data_subset():
    rng = np.random.default_rng(0)
    grid = make_grid([-1.0, -1.0], [1.0, 1.0], [31, 31])
    g = field_from_function(grid, lambda X: 0.8 - np.maximum(np.abs(X[:, 0]), np.abs(X[:, 1])))
    xs = rng.uniform(-1, 1, (40, 2))
    us = rng.uniform(-1, 1, (40, 1))
    vs = rng.normal(size=(40, 2))
    big = Dataset(xs, us, vs)
    small = Dataset(xs[:15], us[:15], vs[:15])
    lip = UniformLipschitz(constant=1.0)
    alpha = auto_dissipation(DataDrivenHamiltonian(big, lip), grid)
    out = {}
    for name, ds in (("small", small), ("big", big)):
        prob = Problem(kind="avoid", unsafe=g, horizon=0.3, hamiltonian=DataDrivenHamiltonian(ds, lip))
        out[name] = solve(prob, SolveConfig(dissipation=alpha))
    assert np.max(out["small"].final_value.values - out["big"].final_value.values) <= 1e-9


def test_solve_reproducible_across_workers():
    prob = drift_problem(n_points=101, horizon=0.3)
    r1 = solve(prob, SolveConfig(workers=1))
    r2 = solve(prob, SolveConfig(workers=8))
    assert np.array_equal(r1.final_value.values, r2.final_value.values)
    assert r1.used_indices == r2.used_indices


def test_solve_pruning_round_trip_bit_exact():
    rng = np.random.default_rng(5)
    grid = make_grid([-1.0, -1.0], [1.0, 1.0], [25, 25])
    g = field_from_function(grid, lambda X: 0.7 - np.sqrt(X[:, 0] ** 2 + X[:, 1] ** 2))
    xs = rng.uniform(-1, 1, (60, 2))
    us = rng.uniform(-1, 1, (60, 1))
    vs = rng.normal(size=(60, 2)) * 0.5
    data = Dataset(xs, us, vs)
    lip = UniformLipschitz(constant=0.8)
    prob = Problem(kind="avoid", unsafe=g, horizon=0.4, hamiltonian=DataDrivenHamiltonian(data, lip))
    first = solve(prob)
    pruned, index_map = prune(data, first.used_indices)
    assert len(pruned) < len(data)
    prob2 = Problem(kind="avoid", unsafe=g, horizon=0.4, hamiltonian=DataDrivenHamiltonian(pruned, lip))
    second = solve(prob2, SolveConfig(dissipation=first.alpha))
    assert np.array_equal(second.final_value.values, first.final_value.values)
    assert second.used_indices == {index_map[i] for i in first.used_indices}


def test_solve_early_convergence():
    grid = make_grid([0.0], [1.0], [21])
    g = ScalarField(grid, grid.coords[0] - 0.5)
    data = Dataset([[0.5]], [[0.0]], [[0.0]])  # zero dynamics, stationary
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    prob = Problem(kind="avoid", unsafe=g, horizon=10.0, hamiltonian=spec)
    res = solve(prob, SolveConfig(convergence_tol=1e-12))
    assert res.converged_early
    assert res.steps_taken == 1


def test_solve_aborts_on_nonfinite():
    # a huge negative observed velocity drives V to -inf within two steps
    grid = make_grid([0.0], [1.0], [11])
    g = ScalarField(grid, grid.coords[0].copy())
    data = Dataset([[0.5]], [[0.0]], [[-1e308]])
    spec = DataDrivenHamiltonian(data, UniformLipschitz(constant=0.0))
    prob = Problem(kind="avoid", unsafe=g, horizon=1.0, hamiltonian=spec)
    with pytest.raises(NumericalAbort) as info:
        with np.errstate(over="ignore", invalid="ignore"):
            solve(prob, SolveConfig(dissipation=np.array([2.0])))
    assert info.value.step >= 0
    assert info.value.coords.shape == (1,)


def test_solve_tvd_rk2_smoke():
    prob = drift_problem(n_points=101, horizon=0.3)
    res = solve(prob, SolveConfig(tvd_rk2=True))
    exact = prob.grid.coords[0] - 0.3
    assert np.max(np.abs(res.final_value.values - exact)) <= 2 * prob.grid.spacing[0]


def test_write_solve_outputs(tmp_path):
    import json

    prob = drift_problem(n_points=31, horizon=0.2)
    res = solve(prob)
    write_solve_outputs(res, tmp_path, basename="value", kind="avoid", cfl_factor=0.5)
    from ddhreach.grid import read_field

    back = read_field(tmp_path / "value.field")
    assert np.array_equal(back.values, res.final_value.values)
    meta = json.loads((tmp_path / "value_meta.json").read_text())
    assert meta["steps_taken"] == res.steps_taken
    assert meta["used_indices"] == sorted(res.used_indices)
    assert meta["alpha"] == list(res.alpha)
