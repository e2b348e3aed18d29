import itertools

import numpy as np
import pytest

from ddhreach.data import (
    Dataset,
    InputElementwiseLipschitz,
    OutputElementwiseLipschitz,
    SensitivityMatrixLipschitz,
    UniformLipschitz,
    prune,
)
from ddhreach.hamiltonian import (
    BoundRefinedHamiltonian,
    BruteForceHamiltonian,
    DataDrivenHamiltonian,
    HamiltonianError,
    HamiltonianPart,
    ModularHamiltonian,
    VelocityBound,
    brute_force_hamiltonian,
    ddh,
    ddh_inner_ball,
    ddh_inner_rect,
    evaluate,
    uncertainty_radius,
    velocity_bound_min,
)
from ddhreach.systems import CallableDynamics, make_polynomial_system, polynomial_true_lipschitz


def sphere_min_oracle(p, v, r, n_points, rng):
    """Monte-Carlo minimum of p.(v + r*e) over unit directions e."""
    e = rng.normal(size=(n_points, len(p)))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    return float(np.min((v + r * e) @ p))


def corner_min_oracle(p, v, r):
    best = np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=len(p)):
        best = min(best, float(p @ (v + r * np.asarray(signs))))
    return best


def test_uncertainty_radius_uniform():
    rad = uncertainty_radius(UniformLipschitz(constant=2.0), [1.5, 0.0], [0.0, 0.0])
    assert rad.kind == "ball" and rad.value == pytest.approx(3.0)


def test_uncertainty_radius_vanishes_at_data_point():
    x = np.array([0.3, -0.7])
    for lip in (
        UniformLipschitz(constant=2.0),
        InputElementwiseLipschitz(vec=np.array([1.0, 2.0])),
        OutputElementwiseLipschitz(vec=np.array([1.0, 2.0])),
        SensitivityMatrixLipschitz(mat=np.eye(2)),
    ):
        rad = uncertainty_radius(lip, x, x)
        assert np.all(np.asarray(rad.value) == 0.0)


def test_uncertainty_radius_matrix():
    lip = SensitivityMatrixLipschitz(mat=np.array([[1.0, 2.0], [0.0, 1.0]]))
    rad = uncertainty_radius(lip, [1.0, 0.5], [0.0, 0.0])
    assert rad.kind == "rect"
    assert np.allclose(rad.value, [2.0, 0.5])


def test_inner_ball_closed_form():
    assert ddh_inner_ball([3, 4], [1, 2], 2.0) == pytest.approx(1.0)
    assert ddh_inner_ball([3, 4], [1, 2], 0.0) == pytest.approx(11.0)
    assert ddh_inner_ball([0, 0], [5, 5], 3.0) == 0.0


def test_inner_ball_against_sphere_oracle():
    rng = np.random.default_rng(0)
    val = ddh_inner_ball([1, -1], [0, 0], 1.0)
    assert val == pytest.approx(-np.sqrt(2.0))
    mc = sphere_min_oracle(np.array([1.0, -1.0]), np.zeros(2), 1.0, 10**6, rng)
    assert mc == pytest.approx(val, abs=1e-3)
    assert mc >= val  # sampling can only overshoot the true minimum


def test_inner_rect_closed_form():
    assert ddh_inner_rect([1, -2], [0, 0], [1, 1]) == pytest.approx(-3.0)
    assert ddh_inner_rect([1, -2], [3, 4], [0, 0]) == pytest.approx(-5.0)
    val = ddh_inner_rect([2, 3], [1, -1], [0.5, 0.5])
    assert val == pytest.approx(-3.5)
    assert val == pytest.approx(corner_min_oracle(np.array([2.0, 3.0]), np.array([1.0, -1.0]), np.array([0.5, 0.5])))


def test_inner_rect_matches_corner_oracle_random():
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = rng.integers(1, 5)
        p = rng.normal(size=n)
        v = rng.normal(size=n)
        r = rng.uniform(0, 2, size=n)
        assert ddh_inner_rect(p, v, r) == pytest.approx(corner_min_oracle(p, v, r), abs=1e-12)


def test_ddh_at_data_point():
    d = Dataset([[0.5, 0.5]], [[0.1]], [[1.0, 2.0]])
    res = ddh([0.5, 0.5], [2.0, -1.0], d, UniformLipschitz(constant=5.0))
    assert res.value == pytest.approx(0.0)  # 2*1 - 1*2
    assert res.argmax_index == 0


def test_ddh_two_sample_hand_example():
    # sample 0 at the query with v=(1,0); sample 1 at distance 5 with v=(2,0)
    d = Dataset([[0.0, 0.0], [5.0, 0.0]], [[0.0], [0.0]], [[1.0, 0.0], [2.0, 0.0]])
    res = ddh([0.0, 0.0], [1.0, 0.0], d, UniformLipschitz(constant=1.0))
    assert res.value == pytest.approx(1.0)
    assert res.argmax_index == 0


def test_ddh_zero_costate():
    rng = np.random.default_rng(1)
    d = Dataset(rng.normal(size=(7, 2)), rng.normal(size=(7, 1)), rng.normal(size=(7, 2)))
    res = ddh([0.0, 0.0], [0.0, 0.0], d, UniformLipschitz(constant=1.0))
    assert res.value == 0.0
    assert res.argmax_index == 0  # ties break to the smallest index


def test_ddh_empty_dataset_errors():
    from ddhreach.data import empty_dataset

    with pytest.raises(HamiltonianError):
        ddh([0.0], [1.0], empty_dataset(1, 1), UniformLipschitz(constant=1.0))


def test_velocity_bound_min_examples():
    b = VelocityBound(lo=[-1, -1], hi=[1, 1])
    assert velocity_bound_min([1, 1], b, [0, 0]) == pytest.approx(-2.0)
    assert velocity_bound_min([0, 0], b, [0, 0]) == 0.0
    b2 = VelocityBound(lo=[0, -1], hi=[1, 0])
    assert velocity_bound_min([-2, 3], b2, [0, 0]) == pytest.approx(-5.0)


def test_bound_refined_falls_back_to_bound():
    # one far sample: DDH inner = -100; bound min = -2
    d = Dataset([[98.0]], [[0.0]], [[-2.0]])
    spec = BoundRefinedHamiltonian(
        inner=DataDrivenHamiltonian(d, UniformLipschitz(constant=1.0)),
        bound=VelocityBound(lo=[-2.0], hi=[2.0]),
    )
    res = evaluate(spec, [0.0], [1.0])
    assert res.value == pytest.approx(-2.0)
    assert res.argmax_index is None


def test_bound_refined_no_nesting():
    d = Dataset([[0.0]], [[0.0]], [[0.0]])
    inner = BoundRefinedHamiltonian(
        inner=DataDrivenHamiltonian(d, UniformLipschitz(constant=1.0)),
        bound=VelocityBound(lo=[-1.0], hi=[1.0]),
    )
    with pytest.raises(HamiltonianError):
        BoundRefinedHamiltonian(inner=inner, bound=VelocityBound(lo=[-1.0], hi=[1.0]))


def test_bound_refined_dominates_plain_ddh():
    rng = np.random.default_rng(4)
    d = Dataset(rng.uniform(-1, 1, (20, 2)), rng.normal(size=(20, 1)), rng.normal(size=(20, 2)))
    lip = UniformLipschitz(constant=1.5)
    plain = DataDrivenHamiltonian(d, lip)
    refined = BoundRefinedHamiltonian(inner=plain, bound=VelocityBound(lo=[-4, -4], hi=[4, 4]))
    for _ in range(100):
        x = rng.uniform(-1, 1, 2)
        p = rng.normal(size=2)
        assert evaluate(refined, x, p).value >= evaluate(plain, x, p).value - 1e-12


def test_modular_known_tilt_channel():
    # DDH over the first two dims plus an exact |p_2| * delta_max term
    d = Dataset([[0.0, 0.0, 0.0]], [[0.0]], [[1.0, -1.0, 0.3]])
    lip = SensitivityMatrixLipschitz(mat=np.zeros((3, 3)))
    delta_max = 0.5
    tilt = CallableDynamics(
        n_x=3, n_u=1, control_lo=[-delta_max], control_hi=[delta_max],
        fn=lambda x, u: np.array([0.0, 0.0, u[0]]),
    )
    spec = ModularHamiltonian(
        parts=(
            HamiltonianPart((0, 1), (0, 1), DataDrivenHamiltonian(d, lip)),
            HamiltonianPart((2,), (2,), BruteForceHamiltonian(tilt, (2,))),
        )
    )
    p = np.array([2.0, 1.0, -3.0])
    res = evaluate(spec, [0.0, 0.0, 0.0], p)
    # first part: 2*1 + 1*(-1) = 1 (p_2 masked); second: |p_2| * 0.5 = 1.5
    assert res.value == pytest.approx(1.0 + 1.5)
    assert res.part_indices == (0, None)
    assert res.argmax_index == 0


def test_modular_requires_partition():
    d = Dataset([[0.0, 0.0]], [[0.0]], [[0.0, 0.0]])
    lip = UniformLipschitz(constant=0.0)
    incomplete = ModularHamiltonian(parts=(HamiltonianPart((0,), (0,), DataDrivenHamiltonian(d, lip)),))
    with pytest.raises(HamiltonianError):
        evaluate(incomplete, [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(HamiltonianError):
        ModularHamiltonian(
            parts=(
                HamiltonianPart((0,), (0,), DataDrivenHamiltonian(d, lip)),
                HamiltonianPart((0,), (0, 1), DataDrivenHamiltonian(d, lip)),
            )
        )


def test_brute_force_box_linear():
    dyn = CallableDynamics(
        n_x=2, n_u=2, control_lo=[-1, -1], control_hi=[1, 1], fn=lambda x, u: np.array([u[0], u[1]])
    )
    assert brute_force_hamiltonian(dyn, [0, 0], [1, -1], (21, 21)) == pytest.approx(2.0)


def test_brute_force_even_function():
    dyn = CallableDynamics(n_x=2, n_u=1, control_lo=[-1], control_hi=[1], fn=lambda x, u: np.array([u[0] ** 2, 0.0]))
    assert brute_force_hamiltonian(dyn, [0, 0], [1, 0], (3,)) == pytest.approx(1.0)


def quadratic_box_max(system, x, p):
    """Exact max over U = [-1,1]^2 of p.f(x,u): interior critical point,
    edge vertices, and corners of the bivariate quadratic."""
    c = np.tensordot(p, np.tensordot(system.coeffs, np.array([1.0, x[0], x[1]]), axes=(1, 0)), axes=(0, 0))
    # c: coefficients over monomials [1, u1, u2, u1^2, u1u2, u2^2]
    c0, c1, c2, c11, c12, c22 = c

    def val(u1, u2):
        return c0 + c1 * u1 + c2 * u2 + c11 * u1 * u1 + c12 * u1 * u2 + c22 * u2 * u2

    best = -np.inf
    for u1, u2 in itertools.product((-1.0, 1.0), repeat=2):
        best = max(best, val(u1, u2))
    # edges: fix one coordinate, 1D quadratic vertex
    for fixed, free in ((0, 1), (1, 0)):
        for s in (-1.0, 1.0):
            if free == 0:
                a, b = c11, c1 + c12 * s
            else:
                a, b = c22, c2 + c12 * s
            if a != 0:
                u = -b / (2 * a)
                if -1 <= u <= 1:
                    best = max(best, val(u, s) if free == 0 else val(s, u))
    # interior critical point
    H = np.array([[2 * c11, c12], [c12, 2 * c22]])
    if abs(np.linalg.det(H)) > 1e-14:
        u = np.linalg.solve(H, -np.array([c1, c2]))
        if np.all(np.abs(u) <= 1):
            best = max(best, val(u[0], u[1]))
    return best


def test_brute_force_refinement_converges_to_exact():
    system = make_polynomial_system(7)
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, 2)
    p = rng.normal(size=2)
    exact = quadratic_box_max(system, x, p)
    prev = -np.inf
    for k in (5, 9, 17, 41):
        val = brute_force_hamiltonian(system, x, p, (k, k))
        assert val >= prev - 1e-12  # refinement never decreases on nested grids
        assert val <= exact + 1e-12
        prev = val
    assert prev == pytest.approx(exact, abs=1e-3)


def test_ddh_lower_bounds_brute_force():
    system = make_polynomial_system(3)
    _, cert = polynomial_true_lipschitz(system)
    rng = np.random.default_rng(11)
    xs = rng.uniform(-1, 1, (200, 2))
    us = rng.uniform(-1, 1, (200, 2))
    vs = np.stack([system.f(x, u) for x, u in zip(xs, us)])
    d = Dataset(xs, us, vs)
    for _ in range(200):
        x = rng.uniform(-1, 1, 2)
        p = rng.normal(size=2)
        lo = ddh(x, p, d, cert).value
        hi = brute_force_hamiltonian(system, x, p, (41, 41))
        assert lo <= hi + 1e-9


def test_ddh_monotone_in_data():
    rng = np.random.default_rng(2)
    xs = rng.uniform(-1, 1, (30, 2))
    vs = rng.normal(size=(30, 2))
    us = rng.normal(size=(30, 1))
    small = Dataset(xs[:10], us[:10], vs[:10])
    big = Dataset(xs, us, vs)
    lip = UniformLipschitz(constant=1.0)
    for _ in range(80):
        x = rng.uniform(-1, 1, 2)
        p = rng.normal(size=2)
        assert ddh(x, p, small, lip).value <= ddh(x, p, big, lip).value + 1e-12


def test_ddh_monotone_in_lipschitz_scaling():
    rng = np.random.default_rng(6)
    d = Dataset(rng.uniform(-1, 1, (15, 2)), rng.normal(size=(15, 1)), rng.normal(size=(15, 2)))
    for lip in (
        UniformLipschitz(constant=0.8),
        InputElementwiseLipschitz(vec=np.array([0.5, 1.0])),
        OutputElementwiseLipschitz(vec=np.array([0.5, 1.0])),
        SensitivityMatrixLipschitz(mat=np.array([[0.5, 0.2], [0.1, 0.8]])),
    ):
        bigger = lip.scaled(1.7)
        for _ in range(40):
            x = rng.uniform(-1, 1, 2)
            p = rng.normal(size=2)
            assert ddh(x, p, d, bigger).value <= ddh(x, p, d, lip).value + 1e-12


def test_positive_homogeneity_all_variants():
    rng = np.random.default_rng(8)
    d = Dataset(rng.uniform(-1, 1, (10, 2)), rng.normal(size=(10, 1)), rng.normal(size=(10, 2)))
    lip = SensitivityMatrixLipschitz(mat=np.array([[0.5, 0.2], [0.1, 0.8]]))
    ddh_spec = DataDrivenHamiltonian(d, lip)
    refined = BoundRefinedHamiltonian(inner=ddh_spec, bound=VelocityBound(lo=[-3, -3], hi=[3, 3]))
    dyn = CallableDynamics(n_x=2, n_u=1, control_lo=[-1], control_hi=[1], fn=lambda x, u: np.array([u[0], x[0]]))
    brute = BruteForceHamiltonian(dyn, (9,))
    for spec in (ddh_spec, refined, brute):
        for _ in range(25):
            x = rng.uniform(-1, 1, 2)
            p = rng.normal(size=2)
            c = rng.uniform(0, 3)
            assert evaluate(spec, x, c * p).value == pytest.approx(c * evaluate(spec, x, p).value, abs=1e-9)
        assert evaluate(spec, x, 0.0 * p).value == pytest.approx(0.0, abs=1e-12)


def test_pruning_exactness_single_query():
    rng = np.random.default_rng(10)
    d = Dataset(rng.uniform(-1, 1, (25, 2)), rng.normal(size=(25, 1)), rng.normal(size=(25, 2)))
    lip = UniformLipschitz(constant=1.0)
    queries = [(rng.uniform(-1, 1, 2), rng.normal(size=2)) for _ in range(50)]
    used = set()
    answers = []
    for x, p in queries:
        res = ddh(x, p, d, lip)
        used.add(res.argmax_index)
        answers.append(res)
    pruned, index_map = prune(d, used)
    for (x, p), res in zip(queries, answers):
        res2 = ddh(x, p, pruned, lip)
        assert res2.value == res.value  # bit-exact
        assert res2.argmax_index == index_map[res.argmax_index]
