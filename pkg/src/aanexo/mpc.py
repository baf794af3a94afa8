"""Receding-horizon controller with mode-scaled tracking weight.

Horizon problem over ``N`` nodes spaced ``h = T / N``::

    min_u  sum_k  w_tau u_k^2 + m w_theta (theta_ref[k+1] - theta[k+1])^2
    s.t.   x[k+1] = RK4(x[k], u_k + tau_h_hat)         (plant sign convention)
           theta_min <= theta <= theta_max,  theta_dot_min <= theta_dot <= theta_dot_max
           tau_min <= u_k <= tau_max

Input bounds are enforced exactly by projection.  State bounds are adjoined
to the cost as Powell-Hestenes-Rockafellar augmented-Lagrangian terms, whose
multipliers are updated between inner projected-gradient passes.  The inner
solver uses Barzilai-Borwein steps with an Armijo backtracking safeguard, so
the augmented cost never increases for fixed multipliers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .plant import JointState, PlantParams

N_CONSTRAINTS = 4


@dataclass(frozen=True)
class MpcConfig:
    horizon: float = 0.2
    steps: int = 20
    w_theta: float = 2.0e5
    w_tau: float = 1.0
    theta_min: float = 0.0
    theta_max: float = 1.4
    theta_dot_min: float = -2.0
    theta_dot_max: float = 2.0
    tau_min: float = -25.0
    tau_max: float = 25.0
    iterations: int = 30
    rho: float = 1.0e4
    rho_max: float = 1.0e6
    rho_growth: float = 2.0
    multiplier_rate: float = 1.0
    multiplier_max: float = 1.0e7
    # state-bound violation (rad or rad/s) above which the penalty is raised
    violation_tol: float = 1e-3
    # projected-gradient infinity norm at which the inner loop stops early
    tolerance: float = 1e-8
    control_dt: float = 0.002

    def __post_init__(self):
        if not self.horizon > 0 or self.steps < 2:
            raise ValueError("need horizon > 0 and steps >= 2")
        if not (self.w_theta > 0 and self.w_tau > 0):
            raise ValueError("weights must be positive")
        for lo, hi in ((self.theta_min, self.theta_max), (self.theta_dot_min, self.theta_dot_max),
                       (self.tau_min, self.tau_max)):
            if not lo < hi:
                raise ValueError(f"bounds must be ordered, got [{lo}, {hi}]")
        if self.iterations < 1 or not self.rho > 0 or not 0 < self.multiplier_rate <= 1:
            raise ValueError("iterations >= 1, rho > 0, 0 < multiplier_rate <= 1 required")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def bounds_array(self) -> np.ndarray:
        return np.array([self.theta_min, self.theta_max, self.theta_dot_min, self.theta_dot_max])


@dataclass
class MpcInputs:
    state: JointState
    theta_ref: np.ndarray
    params: PlantParams
    tau_h_hat: float | np.ndarray = 0.0
    mode: float = 1.0
    theta_ref_dot: float = 0.0

    def human_torque_array(self, steps: int) -> np.ndarray:
        d = np.asarray(self.tau_h_hat, dtype=float)
        if d.ndim == 0:
            return np.full(steps, float(d))
        if d.shape != (steps,):
            raise ValueError(f"human torque window must have {steps} entries, got {d.shape}")
        return d


@dataclass
class HorizonSolution:
    u: np.ndarray
    states: np.ndarray
    cost: float
    violation: float
    iterations: int
    degraded: bool = False
    cost_history: np.ndarray = field(default_factory=lambda: np.empty(0))
    multipliers: np.ndarray | None = None
    rho: float = 0.0
    step_size: float = 0.0

    @property
    def predicted_states(self) -> list[JointState]:
        return [JointState(float(a), float(b)) for a, b in self.states]


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _rk4(th, om, u, J, B, g, h):
    a1 = om
    b1 = (u - B * om - g * math.sin(th)) / J
    a2 = om + 0.5 * h * b1
    b2 = (u - B * a2 - g * math.sin(th + 0.5 * h * a1)) / J
    a3 = om + 0.5 * h * b2
    b3 = (u - B * a3 - g * math.sin(th + 0.5 * h * a2)) / J
    a4 = om + h * b3
    b4 = (u - B * a4 - g * math.sin(th + h * a3)) / J
    return (th + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            om + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4))


@njit(cache=True)
def _rk4_jac(th, om, u, J, B, g, h, A, b):
    """RK4 step returning the next state and filling its Jacobians.

    ``A`` is d(next)/d(state) (2x2), ``b`` is d(next)/du (2,).  Stage
    sensitivities are propagated alongside the stages.
    """
    iJ = 1.0 / J
    # stage 1 at (th, om)
    p1, q1 = th, om
    a1 = q1
    b1 = (u - B * q1 - g * math.sin(p1)) * iJ
    # d(stage)/d(th, om, u): rows for the angle-rate and velocity-rate parts
    c = -g * math.cos(p1) * iJ
    da1 = (0.0, 1.0, 0.0)
    db1 = (c, -B * iJ, iJ)
    # stage 2
    p2 = th + 0.5 * h * a1
    q2 = om + 0.5 * h * b1
    dp2 = (1.0 + 0.5 * h * da1[0], 0.5 * h * da1[1], 0.5 * h * da1[2])
    dq2 = (0.5 * h * db1[0], 1.0 + 0.5 * h * db1[1], 0.5 * h * db1[2])
    a2 = q2
    b2 = (u - B * q2 - g * math.sin(p2)) * iJ
    c = -g * math.cos(p2) * iJ
    da2 = dq2
    db2 = (c * dp2[0] - B * iJ * dq2[0], c * dp2[1] - B * iJ * dq2[1], c * dp2[2] - B * iJ * dq2[2] + iJ)
    # stage 3
    p3 = th + 0.5 * h * a2
    q3 = om + 0.5 * h * b2
    dp3 = (1.0 + 0.5 * h * da2[0], 0.5 * h * da2[1], 0.5 * h * da2[2])
    dq3 = (0.5 * h * db2[0], 1.0 + 0.5 * h * db2[1], 0.5 * h * db2[2])
    a3 = q3
    b3 = (u - B * q3 - g * math.sin(p3)) * iJ
    c = -g * math.cos(p3) * iJ
    da3 = dq3
    db3 = (c * dp3[0] - B * iJ * dq3[0], c * dp3[1] - B * iJ * dq3[1], c * dp3[2] - B * iJ * dq3[2] + iJ)
    # stage 4
    p4 = th + h * a3
    q4 = om + h * b3
    dp4 = (1.0 + h * da3[0], h * da3[1], h * da3[2])
    dq4 = (h * db3[0], 1.0 + h * db3[1], h * db3[2])
    a4 = q4
    b4 = (u - B * q4 - g * math.sin(p4)) * iJ
    c = -g * math.cos(p4) * iJ
    da4 = dq4
    db4 = (c * dp4[0] - B * iJ * dq4[0], c * dp4[1] - B * iJ * dq4[1], c * dp4[2] - B * iJ * dq4[2] + iJ)

    w = h / 6.0
    for j in range(2):
        A[0, j] = (1.0 if j == 0 else 0.0) + w * (da1[j] + 2.0 * da2[j] + 2.0 * da3[j] + da4[j])
        A[1, j] = (1.0 if j == 1 else 0.0) + w * (db1[j] + 2.0 * db2[j] + 2.0 * db3[j] + db4[j])
    b[0] = w * (da1[2] + 2.0 * da2[2] + 2.0 * da3[2] + da4[2])
    b[1] = w * (db1[2] + 2.0 * db2[2] + 2.0 * db3[2] + db4[2])
    return (th + w * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            om + w * (b1 + 2.0 * b2 + 2.0 * b3 + b4))


@njit(cache=True)
def _rollout(x0, u, d, J, B, g, h, xs):
    xs[0, 0] = x0[0]
    xs[0, 1] = x0[1]
    for k in range(u.shape[0]):
        xs[k + 1, 0], xs[k + 1, 1] = _rk4(xs[k, 0], xs[k, 1], u[k] + d[k], J, B, g, h)


@njit(cache=True)
def _psi(lam, rho, c):
    s = lam + rho * c
    return (s * s if s > 0.0 else 0.0) - lam * lam


@njit(cache=True)
def _objective(xs, u, ref, m, w_th, w_tau, bounds, lam, rho):
    """Returns (augmented cost, plain cost)."""
    plain = 0.0
    al = 0.0
    for k in range(u.shape[0]):
        th = xs[k + 1, 0]
        om = xs[k + 1, 1]
        e = ref[k + 1] - th
        plain += w_tau * u[k] * u[k] + m * w_th * e * e
        al += (_psi(lam[k, 0], rho, th - bounds[1]) + _psi(lam[k, 1], rho, bounds[0] - th)
               + _psi(lam[k, 2], rho, om - bounds[3]) + _psi(lam[k, 3], rho, bounds[2] - om))
    return plain + al / (2.0 * rho), plain


@njit(cache=True)
def _cost_grad(x0, u, d, ref, J, B, g, h, m, w_th, w_tau, bounds, lam, rho, xs, A, Bu, grad):
    n = u.shape[0]
    xs[0, 0] = x0[0]
    xs[0, 1] = x0[1]
    for k in range(n):
        xs[k + 1, 0], xs[k + 1, 1] = _rk4_jac(xs[k, 0], xs[k, 1], u[k] + d[k], J, B, g, h, A[k], Bu[k])
    cost, plain = _objective(xs, u, ref, m, w_th, w_tau, bounds, lam, rho)
    p0 = 0.0
    p1 = 0.0
    for k in range(n, 0, -1):
        # state gradient of node-k terms
        e = ref[k] - xs[k, 0]
        gth = -2.0 * m * w_th * e
        gom = 0.0
        th = xs[k, 0]
        om = xs[k, 1]
        s = lam[k - 1, 0] + rho * (th - bounds[1])
        if s > 0.0:
            gth += s
        s = lam[k - 1, 1] + rho * (bounds[0] - th)
        if s > 0.0:
            gth -= s
        s = lam[k - 1, 2] + rho * (om - bounds[3])
        if s > 0.0:
            gom += s
        s = lam[k - 1, 3] + rho * (bounds[2] - om)
        if s > 0.0:
            gom -= s
        p0 += gth
        p1 += gom
        grad[k - 1] = 2.0 * w_tau * u[k - 1] + Bu[k - 1, 0] * p0 + Bu[k - 1, 1] * p1
        # propagate costate through the step into node k-1
        q0 = A[k - 1, 0, 0] * p0 + A[k - 1, 1, 0] * p1
        q1 = A[k - 1, 0, 1] * p0 + A[k - 1, 1, 1] * p1
        p0 = q0
        p1 = q1
    return cost, plain


@njit(cache=True)
def _project(v, lo, hi, out):
    for i in range(v.shape[0]):
        x = v[i]
        if x < lo:
            x = lo
        elif x > hi:
            x = hi
        out[i] = x


@njit(cache=True)
def _inner(x0, u, d, ref, J, B, g, h, m, w_th, w_tau, bounds, lam, rho, lo, hi,
           max_iter, tol, alpha0, history):
    """Projected gradient with BB steps and Armijo safeguard, in place on ``u``.

    Returns (iterations, final alpha, degraded flag, final augmented cost).
    ``history[i]`` is the augmented cost before iteration ``i``.
    """
    n = u.shape[0]
    xs = np.empty((n + 1, 2))
    A = np.empty((n, 2, 2))
    Bu = np.empty((n, 2))
    grad = np.empty(n)
    grad_new = np.empty(n)
    trial = np.empty(n)
    xs_t = np.empty((n + 1, 2))
    _project(u, lo, hi, u)
    cost, _ = _cost_grad(x0, u, d, ref, J, B, g, h, m, w_th, w_tau, bounds, lam, rho, xs, A, Bu, grad)
    alpha = alpha0
    degraded = False
    it = 0
    history[0] = cost
    while it < max_iter:
        # projected-gradient stationarity
        pg = 0.0
        for i in range(n):
            v = u[i] - grad[i]
            if v < lo:
                v = lo
            elif v > hi:
                v = hi
            r = abs(v - u[i])
            if r > pg:
                pg = r
        if pg < tol:
            break
        accepted = False
        for _ls in range(50):
            for i in range(n):
                trial[i] = u[i] - alpha * grad[i]
            _project(trial, lo, hi, trial)
            _rollout(x0, trial, d, J, B, g, h, xs_t)
            new_cost, _ = _objective(xs_t, trial, ref, m, w_th, w_tau, bounds, lam, rho)
            decrease = 0.0
            for i in range(n):
                decrease += grad[i] * (trial[i] - u[i])
            # rounding slack: near the optimum cost differences sink below eps
            if new_cost <= cost + 1e-4 * decrease + 1e-12 * abs(cost):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no descent left: stationary up to rounding, otherwise a failed search
            degraded = pg > 1e-6 * (1.0 + abs(cost))
            break
        new_cost, _ = _cost_grad(x0, trial, d, ref, J, B, g, h, m, w_th, w_tau, bounds, lam, rho,
                                 xs, A, Bu, grad_new)
        sy = 0.0
        ss = 0.0
        for i in range(n):
            s = trial[i] - u[i]
            ss += s * s
            sy += s * (grad_new[i] - grad[i])
            u[i] = trial[i]
            grad[i] = grad_new[i]
        cost = new_cost
        it += 1
        history[it] = cost
        if sy > 1e-300 and ss > 0.0:
            alpha = ss / sy
            if alpha > 1e6:
                alpha = 1e6
        else:
            alpha *= 2.0
        if not math.isfinite(cost):
            break
    return it, alpha, degraded, cost


# --------------------------------------------------------------------------


def discretize_dynamics(state: JointState, params: PlantParams, u: float, tau_h_hat: float,
                        dt: float) -> JointState:
    """One prediction step of the controller model (RK4, plant sign convention)."""
    th, om = _rk4(state.theta, state.theta_dot, u + tau_h_hat, params.inertia, params.damping,
                  params.gravity_torque, dt)
    return JointState(th, om)


def rollout(x0, u, params: PlantParams, tau_h_hat, dt: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    d = np.broadcast_to(np.asarray(tau_h_hat, dtype=float), u.shape).copy()
    xs = np.empty((len(u) + 1, 2))
    _rollout(np.asarray(x0, dtype=float), u, d, params.inertia, params.damping,
             params.gravity_torque, dt, xs)
    return xs


class HorizonProblem:
    """Augmented horizon cost and its exact gradient for fixed multipliers."""

    def __init__(self, inputs: MpcInputs, config: MpcConfig, multipliers=None, rho=None):
        n = config.steps
        ref = np.asarray(inputs.theta_ref, dtype=float)
        if ref.shape != (n + 1,):
            raise ValueError(f"reference window must have {n + 1} entries, got {ref.shape}")
        if not (math.isfinite(inputs.state.theta) and math.isfinite(inputs.state.theta_dot)):
            raise ValueError(f"non-finite current state {inputs.state}")
        if not 0 <= inputs.mode <= 1:
            raise ValueError(f"mode must lie in [0, 1], got {inputs.mode}")
        self.config = config
        self.x0 = inputs.state.as_array()
        self.ref = ref
        self.d = inputs.human_torque_array(n)
        self.params = inputs.params
        self.mode = float(inputs.mode)
        self.bounds = config.bounds_array()
        self.lam = np.zeros((n, N_CONSTRAINTS)) if multipliers is None else np.array(multipliers, dtype=float)
        self.rho = config.rho if rho is None else float(rho)

    def _args(self):
        p = self.params
        c = self.config
        return (p.inertia, p.damping, p.gravity_torque, c.dt, self.mode, c.w_theta, c.w_tau,
                self.bounds, self.lam, self.rho)

    def value_and_grad(self, u) -> tuple[float, np.ndarray]:
        u = np.asarray(u, dtype=float)
        n = len(u)
        J, B, g, h, m, wth, wtau, bounds, lam, rho = self._args()
        grad = np.empty(n)
        cost, _ = _cost_grad(self.x0, u, self.d, self.ref, J, B, g, h, m, wth, wtau, bounds, lam, rho,
                             np.empty((n + 1, 2)), np.empty((n, 2, 2)), np.empty((n, 2)), grad)
        return cost, grad

    def value(self, u) -> float:
        return self.costs(u)[0]

    def costs(self, u) -> tuple[float, float]:
        """(augmented, plain) cost of a control sequence."""
        u = np.asarray(u, dtype=float)
        J, B, g, h, m, wth, wtau, bounds, lam, rho = self._args()
        xs = np.empty((len(u) + 1, 2))
        _rollout(self.x0, u, self.d, J, B, g, h, xs)
        aug, plain = _objective(xs, u, self.ref, m, wth, wtau, bounds, lam, rho)
        return float(aug), float(plain)

    def states(self, u) -> np.ndarray:
        J, B, g, h, *_ = self._args()
        xs = np.empty((len(u) + 1, 2))
        _rollout(self.x0, np.asarray(u, dtype=float), self.d, J, B, g, h, xs)
        return xs

    def violation(self, xs) -> np.ndarray:
        """Constraint values ``c <= 0`` at nodes 1..N, shape ``(N, 4)``."""
        b = self.bounds
        th, om = xs[1:, 0], xs[1:, 1]
        return np.column_stack([th - b[1], b[0] - th, om - b[3], b[2] - om])

    def inner_solve(self, u, max_iter: int, alpha: float):
        u = np.array(u, dtype=float)
        history = np.full(max_iter + 1, np.nan)
        J, B, g, h, m, wth, wtau, bounds, lam, rho = self._args()
        c = self.config
        it, alpha, degraded, cost = _inner(self.x0, u, self.d, self.ref, J, B, g, h, m, wth, wtau,
                                           bounds, lam, rho, c.tau_min, c.tau_max, int(max_iter),
                                           c.tolerance, float(alpha), history)
        if not math.isfinite(cost):
            raise FloatingPointError("non-finite horizon cost")
        return u, it, alpha, bool(degraded), history[: it + 1]

    def update_multipliers(self, xs) -> float:
        """First-order multiplier step; returns the max constraint violation."""
        cv = self.violation(xs)
        rate = self.config.multiplier_rate
        self.lam = np.clip(self.lam + rate * self.rho * cv, 0.0, self.config.multiplier_max)
        return float(max(0.0, cv.max()))


def _initial_alpha(config: MpcConfig, params: PlantParams) -> float:
    # inverse of the curvature contributed by the effort term and one node of tracking
    h = config.dt
    sens = h * h / (2 * params.inertia)
    return 1.0 / (2 * config.w_tau + 2 * config.w_theta * config.steps * sens * sens)


def solve(inputs: MpcInputs, config: MpcConfig = MpcConfig(),
          warm_start: HorizonSolution | None = None, max_iter: int = 2000, outer: int = 20,
          constraint_tol: float = 1e-6) -> HorizonSolution:
    """Solve the horizon problem to convergence (outer multiplier loop)."""
    n = config.steps
    if warm_start is not None:
        u = shift_sequence(warm_start.u, config.control_dt / config.dt)
        lam = (shift_sequence(warm_start.multipliers, config.control_dt / config.dt)
               if warm_start.multipliers is not None else None)
        rho = warm_start.rho or None
        alpha = warm_start.step_size or _initial_alpha(config, inputs.params)
    else:
        u, lam, rho, alpha = np.zeros(n), None, None, _initial_alpha(config, inputs.params)
    prob = HorizonProblem(inputs, config, lam, rho)
    histories = []
    total_it = 0
    degraded = False
    prev_violation = math.inf
    violation = 0.0
    for _ in range(outer):
        u, it, alpha, deg, hist = prob.inner_solve(u, max_iter, alpha)
        total_it += it
        degraded |= deg
        histories.append(hist)
        xs = prob.states(u)
        violation = float(max(0.0, prob.violation(xs).max()))
        if violation <= constraint_tol and not prob.lam.any():
            break
        prev_lam = prob.lam.copy()
        prob.update_multipliers(xs)
        if violation <= constraint_tol and np.allclose(prev_lam, prob.lam, atol=1e-9):
            break
        if violation > 0.25 * prev_violation:
            prob.rho = min(prob.rho * config.rho_growth, config.rho_max)
        prev_violation = violation
    xs = prob.states(u)
    aug, _ = prob.costs(u)
    return HorizonSolution(u=u, states=xs, cost=aug, violation=violation, iterations=total_it,
                           degraded=degraded, cost_history=np.concatenate(histories),
                           multipliers=prob.lam.copy(), rho=prob.rho, step_size=alpha)


def shift_sequence(seq, fraction: float) -> np.ndarray:
    """Advance a node sequence by ``fraction`` of a node interval (linear interpolation)."""
    seq = np.asarray(seq, dtype=float)
    if fraction <= 0:
        return seq.copy()
    whole = int(math.floor(fraction))
    frac = fraction - whole
    idx = np.arange(len(seq)) + whole
    i0 = np.minimum(idx, len(seq) - 1)
    i1 = np.minimum(idx + 1, len(seq) - 1)
    if seq.ndim == 1:
        return (1 - frac) * seq[i0] + frac * seq[i1]
    return (1 - frac) * seq[i0] + frac * seq[i1]


@dataclass
class StepDiagnostics:
    stage_cost: float
    horizon_cost: float
    augmented_cost: float
    violation: float
    iterations: int
    degraded: bool
    cost_history: np.ndarray
    solution: HorizonSolution


class MpcController:
    """Real-time iteration wrapper: bounded work per call, shifted warm start."""

    def __init__(self, config: MpcConfig = MpcConfig()):
        self.config = config
        self.reset()

    def reset(self):
        n = self.config.steps
        self.u = np.zeros(n)
        self.lam = np.zeros((n, N_CONSTRAINTS))
        self.rho = self.config.rho
        self.alpha: float | None = None
        self._prev_violation = math.inf
        self._started = False

    def control_step(self, inputs: MpcInputs) -> tuple[float, StepDiagnostics]:
        cfg = self.config
        frac = cfg.control_dt / cfg.dt
        if self._started:
            self.u = shift_sequence(self.u, frac)
            self.lam = shift_sequence(self.lam, frac)
        # a step size collapsed by one hard line search must not carry over
        a0 = _initial_alpha(cfg, inputs.params)
        self.alpha = a0 if self.alpha is None else min(max(self.alpha, 1e-2 * a0), 1e4 * a0)
        prob = HorizonProblem(inputs, cfg, self.lam, self.rho)
        u, it, alpha, degraded, hist = prob.inner_solve(self.u, cfg.iterations, self.alpha)
        xs = prob.states(u)
        augmented, plain = prob.costs(u)
        violation = prob.update_multipliers(xs)
        if violation > cfg.violation_tol and violation > 0.5 * self._prev_violation:
            prob.rho = min(prob.rho * cfg.rho_growth, cfg.rho_max)
        elif violation <= cfg.violation_tol:
            # relax the penalty once the bounds are satisfied again
            prob.rho = max(cfg.rho, prob.rho / cfg.rho_growth)
        self._prev_violation = violation
        self.u, self.lam, self.rho, self.alpha = u, prob.lam, prob.rho, alpha
        self._started = True

        tau_e = float(u[0])
        e = float(inputs.theta_ref[0] - inputs.state.theta)
        stage = inputs.mode * cfg.w_theta * e * e + cfg.w_tau * tau_e * tau_e
        sol = HorizonSolution(u=u.copy(), states=xs, cost=augmented, violation=violation,
                              iterations=it, degraded=degraded, cost_history=hist,
                              multipliers=prob.lam.copy(), rho=prob.rho, step_size=alpha)
        return tau_e, StepDiagnostics(stage_cost=stage, horizon_cost=plain, augmented_cost=augmented,
                                      violation=violation, iterations=it, degraded=degraded,
                                      cost_history=hist, solution=sol)
