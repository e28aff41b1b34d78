"""
Controller families: decentralized integral, distributed averaging,
virtual-price (convex cost, optional capacity clamp) and delayed integral.

Each law is a plain function of the measured frequencies; ControlLaw bundles
the pieces a simulation needs so the integrator does not rebuild them at
every stage.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Tuple

import numpy as np

from .comm import CommGraph, bridging_sets
from .errors import ValidationError, WrongFamilyError
from .grid import GridSpec

QUADRATIC = "quadratic"
POWER_LAW = "power_law"
CUSTOM = "custom"
COST_FAMILIES = (QUADRATIC, POWER_LAW, CUSTOM)

DECENTRALIZED = "decentralized"
AVERAGING = "averaging"
CONVEX_PRICE = "convex_price"
DELAYED = "delayed"
CONTROLLER_KINDS = (DECENTRALIZED, AVERAGING, CONVEX_PRICE, DELAYED)

PerNode = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CostModel:
    """
    Separable strictly convex cost sum_j f_j(u_j) with f_j(0) = 0.

    quadratic:  f = a u^2 / 2
    power_law:  f = a |u|^gamma / gamma   (gamma > 1; gamma = 3 is the cubic case)
    custom:     user callables f(u, a), g(u, a), g_inv(v, a)

    Args:
        coefficients: per-node a_j > 0
        family: one of quadratic, power_law, custom
        gamma: exponent for power_law
    """

    coefficients: Tuple[float, ...]
    family: str = QUADRATIC
    gamma: float = 2.0
    f: Optional[PerNode] = None
    g: Optional[PerNode] = None
    g_inv: Optional[PerNode] = None

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(a) for a in self.coefficients))
        if self.family not in COST_FAMILIES:
            raise ValidationError(f"unknown cost family '{self.family}'")
        if not all(a > 0 for a in self.coefficients):
            raise ValidationError("cost coefficients must be > 0")
        if self.family == QUADRATIC:
            object.__setattr__(self, "gamma", 2.0)
        elif self.family == POWER_LAW and not self.gamma > 1:
            raise ValidationError("power_law exponent gamma must be > 1")
        elif self.family == CUSTOM and None in (self.f, self.g, self.g_inv):
            raise ValidationError("custom cost needs f, g and g_inv callables")

    @property
    def a(self) -> np.ndarray:
        return np.array(self.coefficients)

    @property
    def is_quadratic(self) -> bool:
        return self.family == QUADRATIC or (self.family == POWER_LAW and self.gamma == 2.0)

    def value(self, u: np.ndarray) -> np.ndarray:
        """Per-node cost f_j(u_j)."""
        u = np.asarray(u, dtype=float)
        if self.family == CUSTOM:
            return np.asarray(self.f(u, self.a), dtype=float)
        return self.a * np.abs(u) ** self.gamma / self.gamma

    def marginal(self, u: np.ndarray) -> np.ndarray:
        """Marginal cost g_j(u_j) = f_j'(u_j)."""
        u = np.asarray(u, dtype=float)
        if self.family == CUSTOM:
            return np.asarray(self.g(u, self.a), dtype=float)
        if self.is_quadratic:
            return self.a * u
        return self.a * np.sign(u) * np.abs(u) ** (self.gamma - 1.0)

    def inverse_marginal(self, v: np.ndarray) -> np.ndarray:
        """g_j^{-1}(v_j): the power whose marginal cost is v_j."""
        v = np.asarray(v, dtype=float)
        if self.family == CUSTOM:
            return np.asarray(self.g_inv(v, self.a), dtype=float)
        if self.is_quadratic:
            return v / self.a
        return np.sign(v) * (np.abs(v) / self.a) ** (1.0 / (self.gamma - 1.0))

    def marginal_slope(self, u: np.ndarray) -> np.ndarray:
        """g_j'(u_j); central differences for custom costs."""
        u = np.asarray(u, dtype=float)
        if self.family == CUSTOM:
            step = 1e-6 * np.maximum(1.0, np.abs(u))
            return (self.marginal(u + step) - self.marginal(u - step)) / (2.0 * step)
        if self.is_quadratic:
            return self.a * np.ones_like(u)
        return self.a * (self.gamma - 1.0) * np.abs(u) ** (self.gamma - 2.0)


@dataclass(frozen=True)
class Capacity:
    """Per-node controllable range [lower_j, upper_j] containing 0."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(c) for c in self.lower))
        object.__setattr__(self, "upper", tuple(float(c) for c in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValidationError("capacity_min and capacity_max lengths differ")
        for j, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if not lo <= 0.0 <= hi:
                raise ValidationError(f"node {j + 1}: capacity box must contain 0")

    @property
    def lower_array(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def upper_array(self) -> np.ndarray:
        return np.array(self.upper)

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lower_array, self.upper_array)


@dataclass(frozen=True)
class ControllerSpec:
    """
    Which control law runs, and its parameters.

    Args:
        kind: decentralized, averaging, convex_price or delayed
        h: common gain, K_j = h / a_j for the integral families
        cost: cost model shared with the dispatch oracles
        delay: timeout T for the delayed controller
        capacity: optional per-node box (convex_price only)
    """

    kind: str
    h: float
    cost: CostModel
    delay: float = 0.0
    capacity: Optional[Capacity] = None

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValidationError(f"unknown controller kind '{self.kind}'")
        if not self.h > 0:
            raise ValidationError("controller gain h must be > 0")
        if not self.delay >= 0:
            raise ValidationError("controller delay must be >= 0")
        if self.capacity is not None:
            if self.kind != CONVEX_PRICE:
                raise ValidationError("capacity limits require the convex_price controller")
            if len(self.capacity.lower) != len(self.cost.coefficients):
                raise ValidationError("capacity arrays must have one entry per node")
        if self.kind != CONVEX_PRICE and not self.cost.is_quadratic:
            raise WrongFamilyError(f"{self.kind} controller needs a quadratic cost")


def gains(cost: CostModel, h: float) -> np.ndarray:
    """K_j = h / a_j."""
    if not h > 0:
        raise ValidationError("controller gain h must be > 0")
    if not cost.is_quadratic:
        raise WrongFamilyError("gains are defined for quadratic costs only; use convex_price")
    return h / cost.a


def integral_law(omega: np.ndarray, K: np.ndarray) -> np.ndarray:
    """du_j/dt = -K_j omega_j."""
    return -K * omega


def _consensus_rate(omega, K, marginal, laplacian, free_mask):
    return -K * omega - free_mask * (laplacian @ marginal)


def _free_mask(n: int, vstar: Iterable[int]) -> np.ndarray:
    mask = np.ones(n)
    mask[list(vstar)] = 0.0
    return mask


def averaging_law(
    omega: np.ndarray,
    K: np.ndarray,
    u: np.ndarray,
    cost: CostModel,
    comm: CommGraph,
    vstar: Iterable[int],
) -> np.ndarray:
    """
    Integral law plus marginal-cost exchange over surviving links.

    Nodes in vstar run the plain integral law; every other node also subtracts
    sum over its surviving neighbours k of (a_j u_j - a_k u_k).
    """
    return _consensus_rate(
        omega, K, cost.marginal(u), comm.surviving_laplacian(), _free_mask(comm.n, vstar)
    )


def price_law(omega: np.ndarray, h: float) -> np.ndarray:
    """dv_j/dt = -h omega_j."""
    return -h * omega


def power_from_price(
    v: np.ndarray, cost: CostModel, capacity: Optional[Capacity] = None
) -> np.ndarray:
    """u_j = g_j^{-1}(v_j), clamped to the capacity box when one is given."""
    u = cost.inverse_marginal(v)
    if capacity is not None:
        u = capacity.clamp(u)
    return u


def delayed_law(t: float, T: float, omega: np.ndarray, K: np.ndarray) -> np.ndarray:
    """No control up to the timeout T, integral law afterwards."""
    if t <= T:
        return np.zeros_like(omega)
    return integral_law(omega, K)


class ControlLaw:
    """
    A controller bound to a grid and communication graph.

    The controller state x is u for the integral families and the virtual
    price v for convex_price; `power(x)` maps it to u.
    """

    def __init__(self, spec: ControllerSpec, grid: GridSpec, comm: Optional[CommGraph] = None):
        if len(spec.cost.coefficients) != grid.n:
            raise ValidationError("cost coefficients must have one entry per node")
        self.spec = spec
        self.kind = spec.kind
        self.bridges = None
        self._K = None if spec.kind == CONVEX_PRICE else gains(spec.cost, spec.h)
        self._a = spec.cost.a

        if spec.kind == AVERAGING:
            comm = comm if comm is not None else CommGraph.from_grid(grid)
            if comm.n != grid.n:
                raise ValidationError("communication graph size does not match the grid")
            self.bridges = bridging_sets(comm, grid)
            self._laplacian = comm.surviving_laplacian()
            self._mask = _free_mask(grid.n, self.bridges.v_star)

    @property
    def uses_price(self) -> bool:
        return self.kind == CONVEX_PRICE

    @property
    def gains(self) -> Optional[np.ndarray]:
        return self._K

    def rate(self, t: float, omega: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.kind == DECENTRALIZED:
            return integral_law(omega, self._K)
        elif self.kind == AVERAGING:
            return _consensus_rate(omega, self._K, self._a * x, self._laplacian, self._mask)
        elif self.kind == CONVEX_PRICE:
            return price_law(omega, self.spec.h)
        return delayed_law(t, self.spec.delay, omega, self._K)

    def power(self, x: np.ndarray) -> np.ndarray:
        if self.uses_price:
            return power_from_price(x, self.spec.cost, self.spec.capacity)
        return x

    def state_from_power(self, u: np.ndarray) -> np.ndarray:
        """Inverse of `power` for unclamped values (v = g(u))."""
        return self.spec.cost.marginal(u) if self.uses_price else np.array(u, dtype=float)


def build_law(
    spec: ControllerSpec, grid: GridSpec, comm: Optional[CommGraph] = None
) -> ControlLaw:
    return ControlLaw(spec, grid, comm)
