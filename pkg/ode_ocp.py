'''
Van der Pol stochastic optimal control benchmark.

    dx1/dt = x2
    dx2/dt = -0.1 (1 - x1^2) x2 - x1 + u

Steer x1 towards 3 over T = 1 s with M = 10 piecewise-constant controls,
-40 <= u <= 40 and -0.25 <= x1(t) <= 2 + 0.1 cos(10 t), for every sampled
initial state x(0) ~ N([0.5, 0], diag(0.01^2, 0.1^2)).

The scenario program is transcribed by single shooting: the controls are the only
decision variables, states come from fixed-step RK4, path constraints are imposed
at every RK4 node. It is solved by an augmented Lagrangian on the state constraints
with a bound-constrained inner solver; gradients are exact reverse-mode adjoints
of the RK4 recursion.
'''
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize
from tqdm import tqdm

from errors import InputError, NumericalError
from sampling import TRAIN_STREAM, make_rng, standard_normal

logger = logging.getLogger(__name__)

INNER_METHODS = ("lbfgsb", "projected_gradient")
# objective reported for trial controls whose rollout diverges
DIVERGED_VALUE = 1e20


@dataclass(frozen=True)
class OcpConfig:
    '''
    T: horizon [s]
    M: number of piecewise-constant control intervals
    substeps: RK4 steps per control interval
    u_min, u_max: control bounds
    x1_lower: lower state bound
    upper_base, upper_amp, upper_freq: upper bound t -> upper_base + upper_amp cos(upper_freq t)
    target: level x1 is steered to
    mean, cov_diag: law of the initial state
    path_constraints: False drops the state bounds entirely
    feas_tol, opt_tol: accept when max violation <= feas_tol and projected gradient <= opt_tol
    rho0, rho_max: penalty parameter schedule of the augmented Lagrangian
    '''
    T: float = 1.0
    M: int = 10
    substeps: int = 10
    u_min: float = -40.0
    u_max: float = 40.0
    x1_lower: float = -0.25
    upper_base: float = 2.0
    upper_amp: float = 0.1
    upper_freq: float = 10.0
    target: float = 3.0
    mean: tuple = (0.5, 0.0)
    cov_diag: tuple = (0.01**2, 0.1**2)
    path_constraints: bool = True
    feas_tol: float = 1e-4
    opt_tol: float = 1e-5
    rho0: float = 10.0
    rho_max: float = 1e6
    max_outer: int = 30
    inner_max_iter: int = 500
    inner_method: str = "lbfgsb"

    def __post_init__(self):
        if not self.T > 0:
            raise InputError(f"T must be > 0, got {self.T}")
        if int(self.M) != self.M or self.M < 1:
            raise InputError(f"M must be an integer >= 1, got {self.M}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise InputError(f"substeps must be an integer >= 1, got {self.substeps}")
        if not self.u_min < self.u_max:
            raise InputError(f"need u_min < u_max, got [{self.u_min}, {self.u_max}]")
        if len(self.mean) != 2 or len(self.cov_diag) != 2:
            raise InputError("mean and cov_diag must have two entries")
        if any(not v > 0 for v in self.cov_diag):
            raise InputError(f"cov_diag must be positive, got {self.cov_diag}")
        if self.inner_method not in INNER_METHODS:
            raise InputError(f"inner_method must be one of {INNER_METHODS}, got {self.inner_method!r}")
        if not (self.feas_tol > 0 and self.opt_tol > 0 and 0 < self.rho0 <= self.rho_max):
            raise InputError("need feas_tol > 0, opt_tol > 0 and 0 < rho0 <= rho_max")

    @property
    def n_steps(self):
        return int(self.M) * int(self.substeps)

    @property
    def h(self):
        return self.T / self.n_steps

    def grid(self):
        return self.h * np.arange(self.n_steps + 1)

    def control_nodes(self):
        '''
        Indices of the RK4 nodes that start or end a control interval (M + 1 of them).
        '''
        return np.arange(0, self.n_steps + 1, int(self.substeps))

    def upper_bound(self, t):
        return self.upper_base + self.upper_amp * np.cos(self.upper_freq * np.asarray(t, dtype=float))

    def to_dict(self):
        return {
            "T": self.T, "M": int(self.M), "substeps": int(self.substeps),
            "u_min": self.u_min, "u_max": self.u_max, "x1_lower": self.x1_lower,
            "upper_base": self.upper_base, "upper_amp": self.upper_amp, "upper_freq": self.upper_freq,
            "target": self.target, "mean": list(self.mean), "cov_diag": list(self.cov_diag),
            "path_constraints": self.path_constraints, "feas_tol": self.feas_tol, "opt_tol": self.opt_tol,
            "rho0": self.rho0, "rho_max": self.rho_max, "max_outer": int(self.max_outer),
            "inner_max_iter": int(self.inner_max_iter), "inner_method": self.inner_method,
        }


@dataclass
class TrajectoryBundle:
    states: np.ndarray          # (N, n_steps + 1, 2)
    initial_states: np.ndarray  # (N, 2)
    t: np.ndarray               # (n_steps + 1,)

    @property
    def x1(self):
        return self.states[:, :, 0]


@dataclass
class OcpSolution:
    u: np.ndarray
    cost: float
    max_violation: float
    outer_iterations: int
    converged: bool
    pg_norm: float = math.inf
    rho: float = 0.0
    # cost after each outer iteration, starting with the initial guess
    history: list = field(default_factory=list, repr=False)

    def summary(self):
        return {
            "cost": self.cost, "max_violation": self.max_violation,
            "outer_iterations": self.outer_iterations, "converged": self.converged,
            "pg_norm": self.pg_norm, "rho": self.rho,
        }


@dataclass
class MarginMatrix:
    values: np.ndarray   # (N, M + 1) margins at the control-grid nodes
    minimum: np.ndarray  # (N,) minimum margin over the full RK4 grid
    t: np.ndarray        # (M + 1,) times of the control-grid nodes


def vdp_rhs(x, u):
    '''
    Right-hand side of the controlled Van der Pol oscillator.
    x has shape (..., 2); u broadcasts against x[..., 0].
    '''
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, -0.1 * (1.0 - x1**2) * x2 - x1 + u], axis=-1)


def _vdp_vjp(x, v):
    '''
    (d vdp_rhs / dx)^T v for batches of states x and cotangents v.
    '''
    x1, x2 = x[..., 0], x[..., 1]
    d21 = 0.2 * x1 * x2 - 1.0
    d22 = -0.1 * (1.0 - x1**2)
    return np.stack([d21 * v[..., 1], v[..., 0] + d22 * v[..., 1]], axis=-1)


def _rk4_stages(rhs, x, u, h):
    k1 = rhs(x, u)
    y2 = x + 0.5 * h * k1
    k2 = rhs(y2, u)
    y3 = x + 0.5 * h * k2
    k3 = rhs(y3, u)
    y4 = x + h * k3
    k4 = rhs(y4, u)
    return (x, y2, y3, y4), (k1, k2, k3, k4)


def rk4_step(rhs, x, u, h):
    _, (k1, k2, k3, k4) = _rk4_stages(rhs, x, u, h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def check_controls(cfg, u):
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != cfg.M:
        raise InputError(f"control sequence must have {cfg.M} entries, got {u.shape[0]}")
    if not np.all(np.isfinite(u)):
        raise InputError("control sequence must be finite")
    return u


def check_initial_states(initial_states):
    x0 = np.asarray(initial_states, dtype=float)
    if x0.ndim == 1:
        x0 = x0.reshape(1, -1)
    if x0.ndim != 2 or x0.shape[1] != 2 or x0.shape[0] < 1:
        raise InputError(f"initial states must have shape (N, 2), got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise InputError("initial states must be finite")
    return x0


def rollout(cfg, u, initial_states, rhs=vdp_rhs):
    '''
    Classical RK4 with step h = T / (M * substeps); u_k is held over interval k.
    All scenarios are integrated together, one vectorized step at a time.
    '''
    u = check_controls(cfg, u)
    x0 = check_initial_states(initial_states)
    h = cfg.h
    states = np.empty((x0.shape[0], cfg.n_steps + 1, 2))
    states[:, 0] = x0
    x = x0
    for j in range(cfg.n_steps):
        x = rk4_step(rhs, x, u[j // cfg.substeps], h)
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
            raise NumericalError(f"state of scenario {bad} became non-finite at RK4 step {j + 1}",
                                 scenario=bad, step=j + 1)
        states[:, j + 1] = x
    return TrajectoryBundle(states=states, initial_states=x0.copy(), t=cfg.grid())


def _trapezoid_weights(cfg):
    w = np.full(cfg.n_steps + 1, cfg.h)
    w[0] = w[-1] = 0.5 * cfg.h
    return w


def ocp_cost(cfg, bundle):
    '''
    (1/N) sum_i int_0^T (x1_i(t) - target)^2 dt, trapezoid rule on the RK4 grid.
    '''
    per_scenario = trapezoid((bundle.x1 - cfg.target) ** 2, dx=cfg.h, axis=1)
    return float(np.mean(per_scenario))


def constraint_array(cfg, bundle):
    '''
    Constraint values c <= 0 of shape (N, nodes, 2): [..., 0] lower bound, [..., 1] upper bound.
    '''
    x1 = bundle.x1
    lower = cfg.x1_lower - x1
    upper = x1 - cfg.upper_bound(bundle.t)[None, :]
    return np.stack([lower, upper], axis=-1)


def constraint_values(cfg, bundle, u=None):
    '''
    Stacked state constraints, scenario-major then node then (lower, upper).
    Control bounds are not included; solvers keep u inside them by projection.
    '''
    return constraint_array(cfg, bundle).reshape(-1)


def max_violation(cfg, bundle):
    if not cfg.path_constraints:
        return 0.0
    return max(float(np.max(constraint_array(cfg, bundle))), 0.0)


def _penalty(multipliers, rho, c):
    '''
    Inequality augmented Lagrangian term (1 / 2 rho) sum [max(0, mu + rho c)^2 - mu^2]
    and its derivative max(0, mu + rho c) with respect to c.
    '''
    shifted = np.maximum(multipliers + rho * c, 0.0)
    value = float(np.sum(shifted**2 - multipliers**2)) / (2.0 * rho)
    return value, shifted


def objective_and_gradient(cfg, u, initial_states, multipliers=None, rho=None):
    '''
    Scenario-averaged cost plus, when multipliers and rho are given, the augmented
    Lagrangian penalty of the state constraints. Returns (value, gradient in u, bundle).
    The gradient is the exact adjoint of the RK4 recursion.
    '''
    u = check_controls(cfg, u)
    bundle = rollout(cfg, u, initial_states)
    n = bundle.states.shape[0]
    h = cfg.h

    value = ocp_cost(cfg, bundle)
    # dJ/dx at every node
    node_grad = np.zeros_like(bundle.states)
    node_grad[:, :, 0] = (2.0 / n) * (bundle.x1 - cfg.target) * _trapezoid_weights(cfg)[None, :]

    if multipliers is not None and cfg.path_constraints:
        penalty, dual = _penalty(multipliers, rho, constraint_array(cfg, bundle))
        value += penalty
        node_grad[:, :, 0] += dual[:, :, 1] - dual[:, :, 0]

    grad_u = np.zeros(cfg.M)
    adjoint = node_grad[:, -1].copy()
    for j in reversed(range(cfg.n_steps)):
        k = j // cfg.substeps
        (x, y2, y3, y4), _ = _rk4_stages(vdp_rhs, bundle.states[:, j], u[k], h)
        k4_bar = (h / 6.0) * adjoint
        k3_bar = (h / 3.0) * adjoint
        k2_bar = (h / 3.0) * adjoint
        k1_bar = (h / 6.0) * adjoint
        x_bar = adjoint.copy()

        y4_bar = _vdp_vjp(y4, k4_bar)
        x_bar += y4_bar
        k3_bar = k3_bar + h * y4_bar
        y3_bar = _vdp_vjp(y3, k3_bar)
        x_bar += y3_bar
        k2_bar = k2_bar + 0.5 * h * y3_bar
        y2_bar = _vdp_vjp(y2, k2_bar)
        x_bar += y2_bar
        k1_bar = k1_bar + 0.5 * h * y2_bar
        x_bar += _vdp_vjp(x, k1_bar)

        # d rhs / du = (0, 1) at every stage
        grad_u[k] += float(np.sum(k1_bar[:, 1] + k2_bar[:, 1] + k3_bar[:, 1] + k4_bar[:, 1]))
        adjoint = x_bar + node_grad[:, j]
    return value, grad_u, bundle


def projected_gradient_norm(cfg, u, grad):
    return float(np.max(np.abs(np.clip(u - grad, cfg.u_min, cfg.u_max) - u)))


def _inner_lbfgsb(cfg, fun, u):
    result = minimize(
        fun, u, jac=True, method="L-BFGS-B",
        bounds=[(cfg.u_min, cfg.u_max)] * cfg.M,
        options={"maxiter": int(cfg.inner_max_iter), "ftol": 1e-15, "gtol": 0.1 * cfg.opt_tol},
    )
    return np.clip(result.x, cfg.u_min, cfg.u_max)


def _inner_projected_gradient(cfg, fun, u, armijo=1e-4):
    '''
    Projected gradient descent with backtracking (Armijo rule along the projection arc).
    '''
    step = 1.0
    value, grad = fun(u)
    for _ in range(int(cfg.inner_max_iter)):
        if projected_gradient_norm(cfg, u, grad) <= 0.1 * cfg.opt_tol:
            break
        while True:
            candidate = np.clip(u - step * grad, cfg.u_min, cfg.u_max)
            candidate_value, candidate_grad = fun(candidate)
            if candidate_value <= value + armijo * float(grad @ (candidate - u)):
                break
            step *= 0.5
            if step < 1e-14:
                return u
        u, value, grad = candidate, candidate_value, candidate_grad
        step = min(2.0 * step, 1e6)
    return u


def _augmented_lagrangian(cfg, x0, multipliers, rho):
    def fun(u):
        try:
            value, grad, _ = objective_and_gradient(cfg, u, x0, multipliers, rho)
        except NumericalError as e:
            logger.debug("solve_ocp: trial control diverged (%s)", e)
            return DIVERGED_VALUE, np.zeros(cfg.M)
        return value, grad
    return fun


def solve_ocp(cfg, initial_states, warm_start=None, progress=False):
    '''
    Augmented Lagrangian over the state constraints:
        inner: minimize cost + penalty over u in [u_min, u_max]^M
        outer: mu <- max(0, mu + rho c); rho <- min(10 rho, rho_max) when the
               violation did not shrink by at least a factor 4
    Starts from u = 0 unless warm_start is given.
    '''
    x0 = check_initial_states(initial_states)
    u = np.zeros(cfg.M) if warm_start is None else np.clip(check_controls(cfg, warm_start), cfg.u_min, cfg.u_max)
    multipliers = np.zeros((x0.shape[0], cfg.n_steps + 1, 2))
    rho = cfg.rho0
    inner = _inner_lbfgsb if cfg.inner_method == "lbfgsb" else _inner_projected_gradient

    bundle = rollout(cfg, u, x0)
    history = [ocp_cost(cfg, bundle)]
    violation, pg_norm, converged = max_violation(cfg, bundle), math.inf, False
    previous_violation = math.inf
    outer = 0
    for outer in tqdm(range(1, int(cfg.max_outer) + 1), desc="augmented Lagrangian", disable=not progress):
        u = inner(cfg, _augmented_lagrangian(cfg, x0, multipliers, rho), u)
        _, grad, bundle = objective_and_gradient(cfg, u, x0, multipliers, rho)
        pg_norm = projected_gradient_norm(cfg, u, grad)
        violation = max_violation(cfg, bundle)
        history.append(ocp_cost(cfg, bundle))
        logger.debug("solve_ocp: outer=%d cost=%.6f violation=%.3e pg=%.3e rho=%.1e",
                     outer, history[-1], violation, pg_norm, rho)

        if violation <= cfg.feas_tol and pg_norm <= cfg.opt_tol:
            converged = True
            break
        if cfg.path_constraints:
            multipliers = np.maximum(multipliers + rho * constraint_array(cfg, bundle), 0.0)
            if violation > 0.25 * previous_violation:
                rho = min(10.0 * rho, cfg.rho_max)
        previous_violation = violation

    if not converged:
        logger.warning("solve_ocp: not converged after %d outer iterations (violation %.3e, pg %.3e)",
                       outer, violation, pg_norm)
    return OcpSolution(
        u=u, cost=history[-1], max_violation=violation, outer_iterations=outer,
        converged=converged, pg_norm=pg_norm, rho=rho, history=history,
    )


def margins(cfg, bundle):
    '''
    xi_i(t) = upper_bound(t) - x1_i(t), the distance to the upper state bound.
    values keeps the M + 1 control-grid nodes (the vectors fed to the kernel),
    minimum is taken over every RK4 node.
    '''
    full = cfg.upper_bound(bundle.t)[None, :] - bundle.x1
    nodes = cfg.control_nodes()
    return MarginMatrix(values=full[:, nodes], minimum=np.min(full, axis=1), t=bundle.t[nodes])


def sample_initial_states(cfg, n, seed, stream=TRAIN_STREAM):
    '''
    n draws of x(0) ~ N(mean, diag(cov_diag)) from the given seed stream.
    '''
    if int(n) != n or n < 1:
        raise InputError(f"need n >= 1 initial states, got {n}")
    rng = make_rng(seed, stream)
    z = standard_normal(rng, (int(n), 2))
    return np.asarray(cfg.mean, dtype=float) + np.sqrt(np.asarray(cfg.cov_diag, dtype=float)) * z


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    cfg = OcpConfig()
    x0 = sample_initial_states(cfg, 100, seed=0)
    sol = solve_ocp(cfg, x0, progress=True)
    print("u* =", np.round(sol.u, 3))
    print(f"cost = {sol.cost:.5f}, max violation = {sol.max_violation:.2e}, converged = {sol.converged}")
