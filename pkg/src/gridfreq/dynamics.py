"""
Time-domain simulation of the swing/load dynamics coupled to a controller.

Generators integrate theta and omega; load frequencies have no inertia and are
eliminated algebraically at every Runge-Kutta stage. The controller state is u
(integral families) or the virtual price v (convex_price).
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .comm import CommGraph
from .control import ControlLaw, ControllerSpec, build_law
from .errors import NoConvergenceError, NonFiniteError, UnbalancedError, ValidationError
from .grid import GridSpec, laplacian_pinv, weighted_laplacian
from .utils import print_progress, print_status, write_csv

BALANCE_TOL = 1e-9


@dataclass
class SystemState:
    theta: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    v: Optional[np.ndarray] = None
    t: float = 0.0


@dataclass
class StateDerivative:
    """Time derivatives; omega entries of load nodes are 0 (algebraic)."""

    theta: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    v: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_max: float = 2000.0
    steady_eps: float = 1e-6
    sample_every: int = 100
    steady_window: float = 5.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("sim.dt must be > 0")
        if not self.t_max > self.dt:
            raise ValidationError("sim.t_max must exceed sim.dt")
        if not self.steady_eps > 0:
            raise ValidationError("sim.steady_eps must be > 0")
        if self.sample_every < 1:
            raise ValidationError("sim.sample_every must be >= 1")
        if self.steady_window < 0:
            raise ValidationError("sim.steady_window must be >= 0")


@dataclass(frozen=True)
class Perturbation:
    """Step change delta_p of the fixed injection at `node` (0-based) at `at_time`."""

    node: int
    delta_p: float
    at_time: float = 0.0


@dataclass
class Trajectory:
    times: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    v: Optional[np.ndarray] = None
    converged: bool = False
    steady_time: Optional[float] = None
    power: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.times)

    def snapshot(self, i: int) -> SystemState:
        v = None if self.v is None else self.v[i]
        return SystemState(self.theta[i], self.omega[i], self.u[i], v, float(self.times[i]))

    @property
    def final(self) -> SystemState:
        return self.snapshot(len(self.times) - 1)

    def require_converged(self) -> "Trajectory":
        if not self.converged:
            raise NoConvergenceError(
                f"no steady state within t={self.times[-1]:.6g} s", trajectory=self
            )
        return self

    def to_csv(self, path: str) -> str:
        n = self.theta.shape[1]
        header = (
            ["t"]
            + [f"theta_{j + 1}" for j in range(n)]
            + [f"omega_{j + 1}" for j in range(n)]
            + [f"u_{j + 1}" for j in range(n)]
        )
        rows = (
            [t, *theta, *omega, *u]
            for t, theta, omega, u in zip(self.times, self.theta, self.omega, self.u)
        )
        return write_csv(path, header, rows)


def perturbed_power(grid: GridSpec, perturbations: Sequence[Perturbation]) -> np.ndarray:
    """p = p0 plus every perturbation, regardless of its time."""
    p = grid.power
    for perturbation in perturbations:
        p[perturbation.node] += perturbation.delta_p
    return p


def initial_steady_state(grid: GridSpec) -> SystemState:
    """
    Pre-disturbance equilibrium: theta0 = (CBC^T)^+ p0 (zero mean), omega = u = 0.

    Raises:
        UnbalancedError: if sum(p0) != 0
    """
    p0 = grid.power
    if abs(float(p0.sum())) > BALANCE_TOL * max(1.0, float(np.abs(p0).sum())):
        raise UnbalancedError(f"unbalanced initial power (sum = {p0.sum():.6g})")
    L = weighted_laplacian(grid)
    theta = laplacian_pinv(L) @ p0
    n = grid.n
    return SystemState(theta=theta, omega=np.zeros(n), u=np.zeros(n), v=np.zeros(n), t=0.0)


class ClosedLoop:
    """
    Grid plus bound control law as a flat ODE y' = F(t, y).

    y = [theta (n), omega at generators (g), controller state x (n)]
    """

    def __init__(self, grid: GridSpec, law: ControlLaw, power: Optional[np.ndarray] = None):
        self.law = law
        self.n = grid.n
        self.L = weighted_laplacian(grid)
        self.D = grid.damping
        self.gen = np.flatnonzero(grid.generator_mask)
        self.load = np.flatnonzero(~grid.generator_mask)
        self.M_gen = grid.inertia[self.gen]
        self.D_gen = self.D[self.gen]
        self.D_load = self.D[self.load]
        self.power = grid.power if power is None else np.array(power, dtype=float)

    def split(self, y: np.ndarray):
        n, g = self.n, len(self.gen)
        return y[:n], y[n:n + g], y[n + g:]

    def frequencies(self, theta: np.ndarray, omega_gen: np.ndarray, u: np.ndarray):
        imbalance = self.power + u - self.L @ theta
        omega = np.empty(self.n)
        omega[self.gen] = omega_gen
        omega[self.load] = imbalance[self.load] / self.D_load
        return omega, imbalance

    def derivative(self, t: float, y: np.ndarray) -> np.ndarray:
        theta, omega_gen, x = self.split(y)
        omega, imbalance = self.frequencies(theta, omega_gen, self.law.power(x))
        domega = (imbalance[self.gen] - self.D_gen * omega_gen) / self.M_gen
        return np.concatenate((omega, domega, self.law.rate(t, omega, x)))

    def pack(self, state: SystemState) -> np.ndarray:
        if self.law.uses_price:
            x = state.v if state.v is not None else self.law.state_from_power(state.u)
        else:
            x = state.u
        return np.concatenate((state.theta, state.omega[self.gen], x))

    def unpack(self, y: np.ndarray, t: float) -> SystemState:
        theta, omega_gen, x = self.split(y)
        u = self.law.power(x)
        omega, _ = self.frequencies(theta, omega_gen, u)
        v = x.copy() if self.law.uses_price else None
        return SystemState(theta.copy(), omega, u, v, t)

    def rk4(self, t: float, y: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.derivative(t, y)
        k2 = self.derivative(t + dt / 2, y + dt / 2 * k1)
        k3 = self.derivative(t + dt / 2, y + dt / 2 * k2)
        k4 = self.derivative(t + dt, y + dt * k3)
        return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rhs(
    state: SystemState,
    grid: GridSpec,
    controller: ControllerSpec,
    comm: Optional[CommGraph] = None,
    power: Optional[np.ndarray] = None,
) -> StateDerivative:
    """Right-hand side of the closed loop at `state` with fixed injections `power`."""
    if len(state.theta) != grid.n:
        raise ValidationError("state dimension does not match the grid")
    loop = ClosedLoop(grid, build_law(controller, grid, comm), power)
    y = loop.pack(state)
    dtheta, domega_gen, dx = loop.split(loop.derivative(state.t, y))
    domega = np.zeros(grid.n)
    domega[loop.gen] = domega_gen
    if not loop.law.uses_price:
        return StateDerivative(dtheta, domega, dx)
    # du/dt as the directional derivative of the clamped price -> power map
    x = loop.split(y)[2]
    eps = 1e-7
    du = (loop.law.power(x + eps * dx) - loop.law.power(x)) / eps
    return StateDerivative(dtheta, domega, du, dx)


def step(
    state: SystemState,
    grid: GridSpec,
    controller: ControllerSpec,
    comm: Optional[CommGraph] = None,
    dt: float = 1e-3,
    power: Optional[np.ndarray] = None,
) -> SystemState:
    """
    One classical RK4 step.

    Raises:
        NonFiniteError: if the new state is not finite
    """
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    loop = ClosedLoop(grid, build_law(controller, grid, comm), power)
    with np.errstate(over="ignore", invalid="ignore"):
        y = loop.rk4(state.t, loop.pack(state), dt)
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("non-finite state", state.t + dt)
    return loop.unpack(y, state.t + dt)


def simulate(
    grid: GridSpec,
    perturbations: Sequence[Perturbation],
    controller: ControllerSpec,
    comm: Optional[CommGraph] = None,
    sim: SimConfig = SimConfig(),
    progress: bool = False,
) -> Trajectory:
    """
    Integrate from the pre-disturbance equilibrium until steady state or t_max.

    Steady state means max|omega| and max|du/dt| stayed below steady_eps for
    steady_window seconds after the last perturbation. Non-convergence is
    reported through Trajectory.converged.

    Raises:
        NonFiniteError: if the integration diverges
    """
    for perturbation in perturbations:
        if not 0 <= perturbation.node < grid.n:
            raise ValidationError(f"perturbation node {perturbation.node + 1} out of range")

    state = initial_steady_state(grid)
    law = build_law(controller, grid, comm)
    loop = ClosedLoop(grid, law)
    pending = sorted(perturbations, key=lambda p: p.at_time)
    last_event = pending[-1].at_time if pending else 0.0

    dt = sim.dt
    n_steps = int(np.ceil(sim.t_max / dt - 1e-9))
    report_every = max(1, n_steps // 100)
    y = loop.pack(state)
    u_prev = law.power(loop.split(y)[2])

    samples: List[SystemState] = [state]
    calm_since: Optional[float] = None
    converged = False
    t = 0.0

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            while pending and pending[0].at_time <= t + 1e-12:
                event = pending.pop(0)
                loop.power[event.node] += event.delta_p
                calm_since = None

            y = loop.rk4(t, y, dt)
            t = (k + 1) * dt
            if not np.all(np.isfinite(y)):
                raise NonFiniteError("non-finite state (reduce sim.dt)", t)

            theta, omega_gen, x = loop.split(y)
            u = law.power(x)
            omega, _ = loop.frequencies(theta, omega_gen, u)
            rate = float(np.max(np.abs(u - u_prev))) / dt
            u_prev = u

            if (k + 1) % sim.sample_every == 0:
                samples.append(loop.unpack(y, t))
            if progress and (k + 1) % report_every == 0:
                print_progress(k + 1, n_steps, "Integrating")

            if pending or t < last_event or max(float(np.max(np.abs(omega))), rate) >= sim.steady_eps:
                calm_since = None
                continue
            if calm_since is None:
                calm_since = t
            if t - calm_since >= sim.steady_window:
                converged = True
                break

    if progress:
        print()
    if samples[-1].t != t:
        samples.append(loop.unpack(y, t))

    trajectory = Trajectory(
        times=np.array([s.t for s in samples]),
        theta=np.array([s.theta for s in samples]),
        omega=np.array([s.omega for s in samples]),
        u=np.array([s.u for s in samples]),
        v=np.array([s.v for s in samples]) if law.uses_price else None,
        converged=converged,
        steady_time=t if converged else None,
        power=loop.power.copy(),
    )
    if converged:
        print_status(f"Steady state reached at t={t:.6g} s", "[OK]")
    else:
        print_status(f"No steady state within t_max={sim.t_max:.6g} s", "[WARN]")
    return trajectory
