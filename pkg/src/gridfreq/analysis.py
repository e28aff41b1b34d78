"""
Closed-form steady states, convergence-time measurement and parameter sweeps.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import brentq, root

from .control import CONVEX_PRICE, DECENTRALIZED, ControllerSpec, CostModel, gains
from .dispatch import evaluate_cost, optimal_convex, cost_gap_bound
from .dynamics import (
    BALANCE_TOL,
    Perturbation,
    SimConfig,
    Trajectory,
    perturbed_power,
    simulate,
)
from .errors import SingularError, UnbalancedError, ValidationError
from .grid import GridSpec, algebraic_connectivity, weighted_laplacian
from .utils import print_status, resolve_threads


@dataclass(frozen=True)
class SteadyPrediction:
    """Steady controllable power u and angle change theta - theta0."""

    u: np.ndarray
    angle_shift: np.ndarray


@dataclass(frozen=True)
class SweepRow:
    h: float
    cost: float
    optimal: float
    gap: float
    bound: float


def _check_balanced(p0: np.ndarray):
    if abs(float(p0.sum())) > BALANCE_TOL * max(1.0, float(np.abs(p0).sum())):
        raise UnbalancedError(f"unbalanced initial power (sum = {p0.sum():.6g})")


def _solve_integral(grid: GridSpec, K: np.ndarray, rhs: np.ndarray) -> SteadyPrediction:
    K = np.asarray(K, dtype=float)
    if not np.all(K > 0):
        raise ValidationError("controller gains K must be > 0")
    A = np.eye(grid.n) + weighted_laplacian(grid) / K
    try:
        u = scipy.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularError(f"steady-state system is singular: {e}") from e
    return SteadyPrediction(u=u, angle_shift=-u / K)


def steady_state_predict(
    grid: GridSpec, K: np.ndarray, p0: np.ndarray, p: np.ndarray
) -> SteadyPrediction:
    """
    Steady state of the decentralized integral controller.

    Solves (I + CBC^T K^{-1}) u = p0 - p; the angles move by -K^{-1} u.
    """
    p0 = np.asarray(p0, dtype=float)
    _check_balanced(p0)
    return _solve_integral(grid, K, p0 - np.asarray(p, dtype=float))


def delayed_limit_predict(
    grid: GridSpec, K: np.ndarray, p0: np.ndarray, p: np.ndarray
) -> SteadyPrediction:
    """
    Steady state of the delayed controller once droop has settled before T.

    Droop spreads the disturbance in proportion to D, so the integral stage
    sees (I + CBC^T K^{-1}) u = -(sum dp) D / sum(D). Angles are returned
    relative to the droop equilibrium, not to theta0.
    """
    p0 = np.asarray(p0, dtype=float)
    _check_balanced(p0)
    damping = grid.damping
    total = float(np.sum(np.asarray(p, dtype=float) - p0))
    return _solve_integral(grid, K, -total * damping / damping.sum())


def predict_price_steady_state(
    grid: GridSpec, cost: CostModel, h: float, p0: np.ndarray, p: np.ndarray
) -> SteadyPrediction:
    """
    Steady state of the virtual-price controller without capacity limits.

    With v = -h (theta - theta0) and u = g^{-1}(v), balance gives
    h u + CBC^T g(u) = h (p0 - p), solved from the optimal dispatch as start.
    """
    if cost.is_quadratic:
        return steady_state_predict(grid, gains(cost, h), p0, p)

    p0 = np.asarray(p0, dtype=float)
    p = np.asarray(p, dtype=float)
    _check_balanced(p0)
    L = weighted_laplacian(grid)
    target = h * (p0 - p)

    def residual(u):
        value = h * u + L @ cost.marginal(u) - target
        jacobian = h * np.eye(grid.n) + L * cost.marginal_slope(u)
        return value, jacobian

    start = optimal_convex(cost, float(np.sum(p - p0))).u
    solution = root(residual, start, jac=True, method="hybr", options={"xtol": 1e-13})
    if not solution.success:
        raise SingularError(f"price steady state not found: {solution.message}")
    u = solution.x
    return SteadyPrediction(u=u, angle_shift=-cost.marginal(u) / h)


def scaling_equivalence(
    grid: GridSpec, h: float, alpha: float, perturbations: Sequence[Perturbation]
) -> float:
    """
    ||u(alpha B, h) - u(B, h / alpha)||_inf for the decentralized controller.
    """
    if not alpha > 0:
        raise ValidationError("alpha must be > 0")
    p0 = grid.power
    p = perturbed_power(grid, perturbations)
    cost = CostModel(tuple(grid.cost))
    scaled = steady_state_predict(grid.scaled(alpha), gains(cost, h), p0, p).u
    reference = steady_state_predict(grid, gains(cost, h / alpha), p0, p).u
    return float(np.max(np.abs(scaled - reference)))


def convergence_time(
    trajectory: Trajectory, u_final: Optional[np.ndarray] = None, eps_rel: float = 0.01
) -> float:
    """
    Earliest sample time after which every sample of u stays within
    eps_rel * max|u_final| of u_final.

    Raises:
        NoConvergenceError: if the trajectory did not reach steady state
    """
    trajectory.require_converged()
    u_final = trajectory.u[-1] if u_final is None else np.asarray(u_final, dtype=float)
    threshold = eps_rel * float(np.max(np.abs(u_final)))
    deviation = np.max(np.abs(trajectory.u - u_final), axis=1)
    outside = np.flatnonzero(deviation > threshold)
    if len(outside) == 0:
        return float(trajectory.times[0])
    last = outside[-1]
    if last + 1 >= len(trajectory.times):
        return float(trajectory.times[-1])
    return float(trajectory.times[last + 1])


def _gap_bound(grid: GridSpec, perturbations: Sequence[Perturbation], h: float) -> float:
    delta = float(sum(abs(p.delta_p) for p in perturbations))
    lambda2 = algebraic_connectivity(grid, weighted=False)
    return cost_gap_bound(delta, grid.n, h, float(grid.susceptance.min()), lambda2)


def _steady_cost(
    grid: GridSpec,
    perturbations: Sequence[Perturbation],
    h: float,
    cost: CostModel,
    use_sim: bool,
    sim: Optional[SimConfig],
) -> float:
    p0 = grid.power
    p = perturbed_power(grid, perturbations)
    if not use_sim:
        return evaluate_cost(predict_price_steady_state(grid, cost, h, p0, p).u, cost)

    kind = DECENTRALIZED if cost.is_quadratic else CONVEX_PRICE
    trajectory = simulate(grid, perturbations, ControllerSpec(kind, h, cost), sim=sim or SimConfig())
    if not trajectory.converged:
        print_status(f"Simulation for h={h:g} did not converge; cost is provisional", "[WARN]")
    return evaluate_cost(trajectory.u[-1], cost)


def _sweep(grid_for, perturbations, values, h_for, cost, use_sim, sim, threads) -> List[SweepRow]:
    delta_total = float(sum(p.delta_p for p in perturbations))
    optimal = optimal_convex(cost, delta_total).total_cost

    def evaluate(value: float) -> SweepRow:
        grid = grid_for(value)
        h = h_for(value)
        steady = _steady_cost(grid, perturbations, h, cost, use_sim, sim)
        return SweepRow(value, steady, optimal, steady - optimal, _gap_bound(grid, perturbations, h))

    results = {}
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as executor:
        future_to_value = {executor.submit(evaluate, value): i for i, value in enumerate(values)}
        for future in as_completed(future_to_value):
            results[future_to_value[future]] = future.result()
    return [results[i] for i in range(len(values))]


def gain_sweep(
    grid: GridSpec,
    perturbations: Sequence[Perturbation],
    h_list: Sequence[float],
    cost: Optional[CostModel] = None,
    use_sim: bool = False,
    sim: Optional[SimConfig] = None,
    threads: Optional[int] = 1,
) -> List[SweepRow]:
    """
    Steady cost against the controller gain h, one row per gain.

    The fast path uses the closed-form predictors; use_sim integrates the
    decentralized (quadratic) or virtual-price (other costs) controller.
    """
    if not h_list:
        raise ValidationError("h_list is empty")
    if any(not h > 0 for h in h_list):
        raise ValidationError("every gain in h_list must be > 0")
    cost = cost if cost is not None else CostModel(tuple(grid.cost))
    return _sweep(lambda h: grid, perturbations, list(h_list), lambda h: h, cost, use_sim, sim, threads)


def susceptance_sweep(
    grid: GridSpec,
    perturbations: Sequence[Perturbation],
    h: float,
    alpha_list: Sequence[float],
    cost: Optional[CostModel] = None,
    threads: Optional[int] = 1,
) -> List[SweepRow]:
    """
    Steady cost with every susceptance divided by alpha; the `h` column holds alpha.

    By the scaling identity the curve matches gain_sweep at h * alpha.
    """
    if not alpha_list:
        raise ValidationError("alpha_list is empty")
    if any(not a > 0 for a in alpha_list):
        raise ValidationError("every alpha must be > 0")
    cost = cost if cost is not None else CostModel(tuple(grid.cost))
    return _sweep(
        lambda alpha: grid.scaled(1.0 / alpha),
        perturbations,
        list(alpha_list),
        lambda alpha: h,
        cost,
        False,
        None,
        threads,
    )


def gain_for_target_cost(
    grid: GridSpec,
    perturbations: Sequence[Perturbation],
    target: float,
    cost: Optional[CostModel] = None,
    h_min: float = 1e-6,
    h_max: float = 1e3,
) -> float:
    """
    Gain h whose predicted steady cost equals `target`.

    Raises:
        ValidationError: if the target is not reachable inside [h_min, h_max]
    """
    cost = cost if cost is not None else CostModel(tuple(grid.cost))

    def excess(log_h: float) -> float:
        return _steady_cost(grid, perturbations, float(np.exp(log_h)), cost, False, None) - target

    lo, hi = np.log(h_min), np.log(h_max)
    if excess(lo) > 0 or excess(hi) < 0:
        raise ValidationError(f"target cost {target:.6g} not reachable for h in [{h_min:g}, {h_max:g}]")
    return float(np.exp(brentq(excess, lo, hi, xtol=1e-12)))


