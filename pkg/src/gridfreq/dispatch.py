"""
Economic dispatch oracles and the cost-gap bound for decentralized control.

Sign convention: delta_total is the net change of fixed injections (a load
increase of 5 is delta_total = -5) and the oracles return the controllable
power u with sum(u) = -delta_total.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import bisect

from .control import Capacity, CostModel
from .errors import InfeasibleError, ValidationError

BALANCE_TOL = 1e-10
MAX_BISECT_ITER = 200
MAX_BRACKET_DOUBLINGS = 1100


@dataclass(frozen=True)
class DispatchResult:
    u: np.ndarray
    price: float
    total_cost: float


def optimal_quadratic(a: np.ndarray, delta_total: float) -> DispatchResult:
    """Closed form: price = -delta_total / sum(1/a_j), u_j = price / a_j."""
    a = np.asarray(a, dtype=float)
    if not np.all(a > 0):
        raise ValidationError("cost coefficients must be > 0")
    inv_sum = float(np.sum(1.0 / a))
    price = -delta_total / inv_sum
    return DispatchResult(u=price / a, price=price, total_cost=price * price * inv_sum / 2.0)


def _bounds(cost: CostModel, capacity: Optional[Capacity]) -> Tuple[np.ndarray, np.ndarray]:
    n = len(cost.coefficients)
    if capacity is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    return capacity.lower_array, capacity.upper_array


def optimal_convex(
    cost: CostModel, delta_total: float, capacity: Optional[Capacity] = None
) -> DispatchResult:
    """
    Minimise sum f_j(u_j) subject to sum u_j = -delta_total and the capacity box.

    Bisection on the common price: u_j(price) = clamp(g_j^{-1}(price)) is
    non-decreasing in price, so the balancing price is bracketed by doubling.

    Raises:
        InfeasibleError: if the capacity sums cannot reach -delta_total
    """
    target = -float(delta_total)
    lower, upper = _bounds(cost, capacity)
    if target < lower.sum() - BALANCE_TOL or target > upper.sum() + BALANCE_TOL:
        raise InfeasibleError(
            f"capacity range [{lower.sum():.6g}, {upper.sum():.6g}] excludes {target:.6g}"
        )
    # within tolerance of a capacity sum counts as that sum
    target = min(max(target, float(lower.sum())), float(upper.sum()))

    def supply(price: float) -> np.ndarray:
        return np.clip(cost.inverse_marginal(np.full(len(lower), price)), lower, upper)

    def excess(price: float) -> float:
        return float(supply(price).sum()) - target

    if target == 0.0:
        price = 0.0
    else:
        lo, hi = -1.0, 1.0
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if excess(lo) <= 0:
                break
            lo *= 2.0
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if excess(hi) >= 0:
                break
            hi *= 2.0
        if excess(lo) > 0 or excess(hi) < 0:
            raise InfeasibleError(f"no finite price balances {target:.6g}")
        price = bisect(
            excess,
            lo,
            hi,
            xtol=1e-15,
            rtol=4 * np.finfo(float).eps,
            maxiter=MAX_BISECT_ITER,
            disp=False,
        )

    u = supply(price)
    # clamped capacity limits the achievable price precision; put the tiny rest on free nodes
    residual = target - u.sum()
    free = (u > lower) & (u < upper)
    if abs(residual) > 0 and free.any():
        u = u.copy()
        u[free] += residual / free.sum()
    return DispatchResult(u=u, price=float(price), total_cost=evaluate_cost(u, cost))


def evaluate_cost(u: np.ndarray, cost: CostModel) -> float:
    """sum_j f_j(u_j)."""
    return float(np.sum(cost.value(u)))


def cost_gap_bound(delta_p: float, n: int, h: float, b: float, lambda2: float) -> float:
    """Worst-case excess cost 4 (dp)^2 n h / (b lambda_2) of decentralized control."""
    if not (h > 0 and b > 0 and lambda2 > 0):
        raise ValidationError("gap bound needs h, b and lambda2 all > 0")
    return 4.0 * delta_p * delta_p * n * h / (b * lambda2)


def marginal_spread(u: np.ndarray, cost: CostModel) -> float:
    """max_j g_j(u_j) - min_j g_j(u_j)."""
    marginal = cost.marginal(u)
    return float(marginal.max() - marginal.min())
