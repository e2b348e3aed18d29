"""Dynamics oracles and rollout simulation.

Holds the generic dynamics interface, RK4 rollouts with exact velocity
sampling, the seeded random polynomial benchmark, and a surrogate
tiltrotor longitudinal model with trim search and a proportional backup
controller. All oracles are pure; rollouts are independent of each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SensitivityMatrixLipschitz
from .hamiltonian import VelocityBound, control_points

__all__ = [
    "Dynamics",
    "CallableDynamics",
    "PolynomialSystem",
    "make_polynomial_system",
    "polynomial_true_lipschitz",
    "polynomial_velocity_bound",
    "TiltrotorParams",
    "TiltrotorSystem",
    "tiltrotor_dynamics",
    "tiltrotor_trim",
    "Trajectory",
    "rk4_rollout",
    "write_trajectory_csv",
    "sampled_velocity_bound",
    "sampled_sensitivity_bound",
]


class SystemError_(ValueError):
    pass


class Dynamics:
    """Deterministic control system: velocity map f(x, u), control box."""

    n_x: int
    n_u: int
    control_lo: np.ndarray
    control_hi: np.ndarray

    def f(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def f_batch(self, X, u) -> np.ndarray:
        """Velocities at a batch of states under one control; subclasses
        override with vectorized forms."""
        return np.stack([self.f(x, u) for x in np.atleast_2d(X)])


class CallableDynamics(Dynamics):
    def __init__(self, n_x, n_u, control_lo, control_hi, fn, fn_batch=None):
        self.n_x = n_x
        self.n_u = n_u
        self.control_lo = np.asarray(control_lo, dtype=np.float64)
        self.control_hi = np.asarray(control_hi, dtype=np.float64)
        self._fn = fn
        self._fn_batch = fn_batch

    def f(self, x, u):
        return np.asarray(self._fn(np.asarray(x, dtype=np.float64), np.asarray(u, dtype=np.float64)), dtype=np.float64)

    def f_batch(self, X, u):
        if self._fn_batch is not None:
            return np.asarray(self._fn_batch(np.atleast_2d(X), np.asarray(u)), dtype=np.float64)
        return super().f_batch(X, u)


# --------------------------------------------------------------------------
# Pinned PRNG so polynomial benchmark seeds are portable across
# implementations and platforms.
# --------------------------------------------------------------------------

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class XorShift64Star:
    """xorshift64* generator. State seeded with one splitmix64 step of the
    user seed (forced nonzero). uniform() maps the top 53 output bits to
    [0, 1)."""

    def __init__(self, seed: int):
        s = _splitmix64(seed & _MASK)
        self.state = s if s != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)


# --------------------------------------------------------------------------
# Random polynomial benchmark: f_i(x, u) = p_i(u) + q_i(u) x_1 + r_i(u) x_2
# with p, q, r quadratic in (u_1, u_2); coefficients uniform in [-2, 2];
# the constant terms of p_i are zero so x = 0 is an equilibrium under u = 0.
# --------------------------------------------------------------------------

_MONOMIAL_NAMES = ("1", "u1", "u2", "u1^2", "u1*u2", "u2^2")


def _monomials(u1, u2):
    return np.stack([np.ones_like(u1), u1, u2, u1 * u1, u1 * u2, u2 * u2], axis=-1)


class PolynomialSystem(Dynamics):
    """Two-state, two-control system affine in state, quadratic in control.

    ``coeffs`` has shape (2 outputs, 3 multipliers [const, x1, x2],
    6 monomials [1, u1, u2, u1^2, u1 u2, u2^2]). Controls live in
    [-1, 1]^2 (kept simple so the analytic Lipschitz arithmetic is clean).
    """

    def __init__(self, coeffs: np.ndarray, seed: int | None = None):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (2, 3, 6):
            raise SystemError_(f"coefficient tensor must be (2,3,6), got {coeffs.shape}")
        if np.any(np.abs(coeffs) > 2.0):
            raise SystemError_("coefficients must lie in [-2, 2]")
        if coeffs[0, 0, 0] != 0.0 or coeffs[1, 0, 0] != 0.0:
            raise SystemError_("constant terms of p_i must be zero (x=0 equilibrium under u=0)")
        self.coeffs = coeffs
        self.seed = seed
        self.n_x = 2
        self.n_u = 2
        self.control_lo = np.array([-1.0, -1.0])
        self.control_hi = np.array([1.0, 1.0])

    def _pqr(self, u):
        mon = _monomials(np.float64(u[0]), np.float64(u[1]))
        return self.coeffs @ mon  # (2, 3): [output, multiplier]

    def f(self, x, u):
        c = self._pqr(u)
        return c[:, 0] + c[:, 1] * x[0] + c[:, 2] * x[1]

    def f_batch(self, X, u):
        c = self._pqr(u)
        X = np.atleast_2d(X)
        return c[None, :, 0] + np.outer(X[:, 0], c[:, 1]) + np.outer(X[:, 1], c[:, 2])

    def affine_tables(self, U):
        """Tabulated state-affine form over a control set: f(x, u_k) =
        C0_k + CX_k x. Feeds the fast brute-force kernel."""
        mon = _monomials(U[:, 0], U[:, 1])  # (K, 6)
        P = mon @ self.coeffs[:, 0, :].T  # (K, 2)
        Q = mon @ self.coeffs[:, 1, :].T
        R = mon @ self.coeffs[:, 2, :].T
        CX = np.stack([Q, R], axis=-1)  # (K, 2, 2)
        return P, CX


def make_polynomial_system(seed: int) -> PolynomialSystem:
    """Deterministic benchmark instance from a seed.

    PRNG: xorshift64* (state = splitmix64(seed), forced nonzero; uniform
    values from the top 53 bits). Draw order: output i in {1, 2}, then
    multiplier in {constant, x1, x2}, then the 6 monomial coefficients;
    all 36 values drawn from [-2, 2], after which the constant terms of
    p_1, p_2 are set to zero.
    """
    rng = XorShift64Star(seed)
    coeffs = np.empty((2, 3, 6))
    for i in range(2):
        for m in range(3):
            for k in range(6):
                coeffs[i, m, k] = rng.uniform(-2.0, 2.0)
    coeffs[0, 0, 0] = 0.0
    coeffs[1, 0, 0] = 0.0
    return PolynomialSystem(coeffs, seed=seed)


def polynomial_true_lipschitz(sys: PolynomialSystem, control_counts=(41, 41)):
    """Sensitivity matrices for the polynomial system.

    Returns ``(grid_estimate, certified)``: the grid estimate maximizes
    |df_i/dx_j| = |q_i(u)| or |r_i(u)| over a control grid (converges to
    the true box maximum under refinement); the certified bound is the
    triangle inequality sum of absolute coefficients, valid because every
    monomial has magnitude at most 1 on the control box.
    """
    U = control_points(sys.control_lo, sys.control_hi, control_counts)
    mon = _monomials(U[:, 0], U[:, 1])  # (K, 6)
    est = np.empty((2, 2))
    for i in range(2):
        for j, mult in ((0, 1), (1, 2)):
            est[i, j] = np.max(np.abs(mon @ sys.coeffs[i, mult]))
    cert = np.stack(
        [[np.sum(np.abs(sys.coeffs[i, 1])), np.sum(np.abs(sys.coeffs[i, 2]))] for i in range(2)]
    )
    return (
        SensitivityMatrixLipschitz(mat=est, certified=False),
        SensitivityMatrixLipschitz(mat=cert, certified=True),
    )


def polynomial_velocity_bound(sys: PolynomialSystem, mins, maxs) -> VelocityBound:
    """Certified symmetric velocity bound over a state box via coefficient
    sums: |f_i| <= sum|p_i| + sum|q_i| max|x1| + sum|r_i| max|x2|."""
    mins = np.asarray(mins, dtype=np.float64)
    maxs = np.asarray(maxs, dtype=np.float64)
    xmax = np.maximum(np.abs(mins), np.abs(maxs))
    b = np.empty(2)
    for i in range(2):
        b[i] = (
            np.sum(np.abs(sys.coeffs[i, 0]))
            + np.sum(np.abs(sys.coeffs[i, 1])) * xmax[0]
            + np.sum(np.abs(sys.coeffs[i, 2])) * xmax[1]
        )
    return VelocityBound(lo=-b, hi=b)


# --------------------------------------------------------------------------
# Surrogate tiltrotor longitudinal model. State x = [airspeed v (m/s),
# flight path angle gamma (rad), rotor tilt beta (rad; 0 = cruise)],
# control u = [thrust T (N), angle of attack alpha (rad), tilt rate
# delta (rad/s)]:
#
#   v_dot     = -g sin(gamma) + (T cos(alpha + beta) - D) / m
#   gamma_dot = -(g / v) cos(gamma) + (T sin(alpha + beta) + L) / (m v)
#   beta_dot  = delta
#
# Lift/drag come from a parametric surrogate: C_L = C_L0(beta) +
# C_La(beta) alpha, C_D = C_D0(beta) + k(beta) C_L^2, with each
# coefficient interpolated linearly in beta between a wing-borne (cruise)
# end and a rotor-borne (hover) end. This is NOT a real aerodynamic
# database; quantitative results are properties of the surrogate only.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TiltrotorParams:
    m: float = 5900.0  # kg
    g: float = 9.81  # m/s^2
    S: float = 15.7  # wing reference area, m^2
    rho: float = 1.225  # air density, kg/m^3
    T_max: float = 87000.0  # rotor thrust bound, N
    alpha_min: float = -0.1745  # rad (-10 deg)
    alpha_max: float = 0.1745  # rad (+10 deg)
    delta_max: float = 0.15  # tilt rate bound, rad/s
    v_floor: float = 1.0  # guards the 1/v singularity
    # cruise-end (beta = 0) aero surrogate
    cl0_cruise: float = 0.30
    cla_cruise: float = 5.7  # 1/rad
    cd0_cruise: float = 0.025
    k_cruise: float = 0.05
    # hover-end (beta = 90 deg)
    cl0_hover: float = 0.0
    cla_hover: float = 1.0
    cd0_hover: float = 0.10
    k_hover: float = 0.10

    def __post_init__(self):
        if min(self.m, self.g, self.S, self.rho) <= 0:
            raise SystemError_("m, g, S, rho must be positive")


def _aero_coeffs(params: TiltrotorParams, beta):
    frac = np.clip(beta / (0.5 * math.pi), 0.0, 1.0)  # 0 = cruise, 1 = hover
    cl0 = params.cl0_cruise + (params.cl0_hover - params.cl0_cruise) * frac
    cla = params.cla_cruise + (params.cla_hover - params.cla_cruise) * frac
    cd0 = params.cd0_cruise + (params.cd0_hover - params.cd0_cruise) * frac
    kin = params.k_cruise + (params.k_hover - params.k_cruise) * frac
    return cl0, cla, cd0, kin


def _lift_drag(params: TiltrotorParams, v, alpha, beta):
    cl0, cla, cd0, kin = _aero_coeffs(params, beta)
    cl = cl0 + cla * alpha
    q = 0.5 * params.rho * v * v * params.S
    return q * cl, q * (cd0 + kin * cl * cl)


def tiltrotor_dynamics(params: TiltrotorParams, x, u) -> np.ndarray:
    """(v_dot, gamma_dot, beta_dot) at a single state/control."""
    v, gamma, beta = float(x[0]), float(x[1]), float(x[2])
    if v <= params.v_floor:
        raise SystemError_(f"airspeed {v} at or below the floor {params.v_floor} m/s")
    T, alpha, delta = float(u[0]), float(u[1]), float(u[2])
    lift, drag = _lift_drag(params, v, alpha, beta)
    v_dot = -params.g * math.sin(gamma) + (T * math.cos(alpha + beta) - drag) / params.m
    gamma_dot = -(params.g / v) * math.cos(gamma) + (T * math.sin(alpha + beta) + lift) / (params.m * v)
    return np.array([v_dot, gamma_dot, delta])


class TiltrotorSystem(Dynamics):
    def __init__(self, params: TiltrotorParams = TiltrotorParams()):
        self.params = params
        self.n_x = 3
        self.n_u = 3
        self.control_lo = np.array([0.0, params.alpha_min, -params.delta_max])
        self.control_hi = np.array([params.T_max, params.alpha_max, params.delta_max])

    def f(self, x, u):
        return tiltrotor_dynamics(self.params, x, u)

    def f_batch(self, X, u):
        X = np.atleast_2d(X)
        p = self.params
        v, gamma, beta = X[:, 0], X[:, 1], X[:, 2]
        if np.any(v <= p.v_floor):
            raise SystemError_(f"airspeed at or below the floor {p.v_floor} m/s in batch")
        T, alpha, delta = float(u[0]), float(u[1]), float(u[2])
        lift, drag = _lift_drag(p, v, alpha, beta)
        v_dot = -p.g * np.sin(gamma) + (T * np.cos(alpha + beta) - drag) / p.m
        gamma_dot = -(p.g / v) * np.cos(gamma) + (T * np.sin(alpha + beta) + lift) / (p.m * v)
        return np.stack([v_dot, gamma_dot, np.full_like(v, delta)], axis=-1)


def tiltrotor_trim(params: TiltrotorParams, v: float, beta: float):
    """Controls (T, alpha) with v_dot = gamma_dot = 0 at (v, gamma=0, beta),
    by 2D root search. Returns (T, alpha, residual); the residual tells the
    caller whether a trim point actually exists there within control
    bounds."""
    from scipy.optimize import root

    sys_ = TiltrotorSystem(params)

    def residual(z):
        T = z[0] * params.T_max
        alpha = z[1]
        vel = sys_.f(np.array([v, 0.0, beta]), np.array([T, alpha, 0.0]))
        return [vel[0], vel[1] * v]  # scale gamma_dot so both residuals are in m/s^2

    sol = root(residual, x0=[params.m * params.g / params.T_max, 0.0], method="hybr", tol=1e-12)
    T = float(np.clip(sol.x[0] * params.T_max, 0.0, params.T_max))
    alpha = float(np.clip(sol.x[1], params.alpha_min, params.alpha_max))
    vel = sys_.f(np.array([v, 0.0, beta]), np.array([T, alpha, 0.0]))
    res = float(np.hypot(vel[0], vel[1] * v))
    return T, alpha, res


# --------------------------------------------------------------------------
# Rollouts
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Uniformly sampled rollout: at each sample time the state, the
    zero-order-hold control, and the exact velocity v = f(x, u)."""

    times: np.ndarray
    xs: np.ndarray
    us: np.ndarray
    vs: np.ndarray
    tags: list = field(default_factory=list)
    diverged: bool = False

    def __len__(self):
        return len(self.times)


def rk4_rollout(dyn: Dynamics, policy, x0, T: float, dt: float) -> Trajectory:
    """Classical RK4 under zero-order-hold control.

    The policy is queried once per step; it may return a control or a
    (control, branch_tag) pair. Records floor(T/dt) + 1 samples. A
    non-finite state aborts with the partial trajectory and the diverged
    flag set.
    """
    if T <= 0 or dt <= 0 or int(math.floor(T / dt + 1e-12)) < 1:
        raise SystemError_(f"need T > 0, dt > 0 and at least one step; got T={T}, dt={dt}")
    n_steps = int(math.floor(T / dt + 1e-12))
    x = np.asarray(x0, dtype=np.float64).copy()
    times, xs, us, vs, tags = [], [], [], [], []
    diverged = False
    for step in range(n_steps + 1):
        out = policy(x)
        if isinstance(out, tuple):
            u, tag = out
        else:
            u, tag = out, "-"
        u = np.asarray(u, dtype=np.float64)
        v = dyn.f(x, u)
        times.append(step * dt)
        xs.append(x.copy())
        us.append(u.copy())
        vs.append(np.asarray(v, dtype=np.float64))
        tags.append(tag)
        if step == n_steps:
            break
        k1 = v
        k2 = dyn.f(x + 0.5 * dt * k1, u)
        k3 = dyn.f(x + 0.5 * dt * k2, u)
        k4 = dyn.f(x + dt * k3, u)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            diverged = True
            break
    return Trajectory(
        times=np.asarray(times),
        xs=np.asarray(xs),
        us=np.asarray(us),
        vs=np.asarray(vs),
        tags=tags,
        diverged=diverged,
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Dataset CSV schema plus a leading time column and trailing branch tag."""
    n_x = traj.xs.shape[1]
    n_u = traj.us.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        names = (
            ["time"]
            + [f"x{i}" for i in range(n_x)]
            + [f"u{i}" for i in range(n_u)]
            + [f"v{i}" for i in range(n_x)]
            + ["branch"]
        )
        fh.write(",".join(names) + "\n")
        for i in range(len(traj)):
            row = np.concatenate([[traj.times[i]], traj.xs[i], traj.us[i], traj.vs[i]])
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{traj.tags[i]}\n")


# --------------------------------------------------------------------------
# Sampled prior-knowledge bounds (used where analytic bounds are not
# available, e.g. the tiltrotor surrogate)
# --------------------------------------------------------------------------


def _state_samples(mins, maxs, per_axis):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(mins, maxs)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def sampled_velocity_bound(dyn: Dynamics, mins, maxs, per_axis=7, control_per_axis=5, margin=1.2) -> VelocityBound:
    """Velocity bound from dense deterministic sampling of |f| over
    domain x control box, inflated by ``margin``. Prior knowledge, not a
    certificate."""
    X = _state_samples(mins, maxs, per_axis)
    U = control_points(dyn.control_lo, dyn.control_hi, [control_per_axis] * dyn.n_u)
    hi = np.full(dyn.n_x, -np.inf)
    lo = np.full(dyn.n_x, np.inf)
    for u in U:
        V = dyn.f_batch(X, u)
        hi = np.maximum(hi, V.max(axis=0))
        lo = np.minimum(lo, V.min(axis=0))
    center = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo) * margin
    return VelocityBound(lo=center - half, hi=center + half)


def sampled_sensitivity_bound(
    dyn: Dynamics, mins, maxs, per_axis=7, control_per_axis=5, margin=1.3, fd_step=1e-5
) -> SensitivityMatrixLipschitz:
    """Sensitivity matrix from central finite differences of f over a dense
    deterministic sample of domain x control box, inflated by ``margin``.
    Prior knowledge standing in for constants a practitioner would obtain
    offline; flagged non-certified."""
    X = _state_samples(mins, maxs, per_axis)
    U = control_points(dyn.control_lo, dyn.control_hi, [control_per_axis] * dyn.n_u)
    n = dyn.n_x
    best = np.zeros((n, n))
    steps = fd_step * np.maximum(1.0, np.asarray(maxs) - np.asarray(mins))
    for u in U:
        for j in range(n):
            dxj = np.zeros(n)
            dxj[j] = steps[j]
            J_col = (dyn.f_batch(X + dxj, u) - dyn.f_batch(X - dxj, u)) / (2.0 * steps[j])
            best[:, j] = np.maximum(best[:, j], np.max(np.abs(J_col), axis=0))
    return SensitivityMatrixLipschitz(mat=best * margin, certified=False)
