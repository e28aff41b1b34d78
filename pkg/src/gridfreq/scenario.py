"""
Scenario documents (TOML) and run reports.

Node ids in scenario files are 1-based; everything in memory is 0-based.
See the bundled ``scenarios/tennode.scenario`` for the normative example.
"""

import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .comm import CommGraph, component_prices
from .control import (
    DECENTRALIZED,
    QUADRATIC,
    Capacity,
    ControllerSpec,
    CostModel,
)
from .dispatch import evaluate_cost, marginal_spread, optimal_convex, cost_gap_bound
from .dynamics import BALANCE_TOL, Perturbation, SimConfig, Trajectory
from .errors import ParseError, UnbalancedError, ValidationError
from .grid import GENERATOR, LOAD, GridSpec, LineSpec, NodeParams, algebraic_connectivity

_REQUIRED = object()


@dataclass(frozen=True)
class Scenario:
    name: str
    grid: GridSpec
    perturbations: Tuple[Perturbation, ...]
    controller: ControllerSpec
    comm: CommGraph
    sim: SimConfig
    description: str = ""

    @property
    def delta_total(self) -> float:
        return float(sum(p.delta_p for p in self.perturbations))


@dataclass
class RunReport:
    u: np.ndarray
    total_cost: float
    optimal_cost: float
    gap: float
    bound: float
    convergence_time: Optional[float]
    marginal_spread: float
    component_prices: List[Tuple[frozenset, float]] = field(default_factory=list)
    converged: bool = False
    bound_satisfied: bool = False

    def rows(self) -> List[Tuple[str, Any]]:
        """(field, value) pairs in report.csv order."""
        rows: List[Tuple[str, Any]] = [
            ("total_cost", self.total_cost),
            ("optimal_cost", self.optimal_cost),
            ("gap", self.gap),
            ("bound", self.bound),
            ("convergence_time", self.convergence_time),
            ("marginal_spread", self.marginal_spread),
            ("converged", self.converged),
            ("bound_satisfied", self.bound_satisfied),
        ]
        rows += [(f"u_{j + 1}", value) for j, value in enumerate(self.u)]
        for members, price in self.component_prices:
            nodes = "+".join(str(j + 1) for j in sorted(members))
            rows.append((f"price_{nodes}", price))
        return rows


def _where(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _get(table: Dict[str, Any], key: str, path: str, kind: type, default: Any = _REQUIRED) -> Any:
    if key not in table:
        if default is _REQUIRED:
            raise ParseError("missing required field", field=_where(path, key))
        return default
    value = table[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"expected a number, got {value!r}", field=_where(path, key))
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"expected an integer, got {value!r}", field=_where(path, key))
        return value
    if not isinstance(value, kind):
        raise ParseError(f"expected {kind.__name__}, got {value!r}", field=_where(path, key))
    return value


def _tables(document: Dict[str, Any], key: str) -> List[Dict[str, Any]]:
    value = document.get(key, [])
    if not isinstance(value, list) or not all(isinstance(item, dict) for item in value):
        raise ParseError("expected an array of tables", field=key)
    return value


def _node_index(value: int, n: int, where: str) -> int:
    if not 1 <= value <= n:
        raise ValidationError(f"{where}: node {value} out of range 1..{n}")
    return value - 1


def _numbers(values: List[Any], where: str) -> Tuple[float, ...]:
    for k, value in enumerate(values):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"expected a number, got {value!r}", field=f"{where}[{k}]")
    return tuple(float(value) for value in values)


def _pairs(values: Any, n: int, where: str) -> List[Tuple[int, int]]:
    if not isinstance(values, list):
        raise ParseError("expected an array of [i, j] pairs", field=where)
    pairs = []
    for k, pair in enumerate(values):
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, int) for x in pair)):
            raise ParseError("expected an [i, j] pair of integers", field=f"{where}[{k}]")
        pairs.append(
            (_node_index(pair[0], n, f"{where}[{k}]"), _node_index(pair[1], n, f"{where}[{k}]"))
        )
    return pairs


def _parse_nodes(document: Dict[str, Any]) -> List[NodeParams]:
    nodes = []
    for k, table in enumerate(_tables(document, "nodes")):
        path = f"nodes[{k}]"
        inertia = _get(table, "inertia", path, float, 0.0)
        kind = _get(table, "kind", path, str, GENERATOR if inertia > 0 else LOAD)
        nodes.append(
            NodeParams(
                kind=kind,
                inertia=inertia,
                damping=_get(table, "damping", path, float),
                power=_get(table, "power", path, float),
                cost=_get(table, "cost", path, float),
            )
        )
    return nodes


def _parse_lines(document: Dict[str, Any], n: int) -> List[LineSpec]:
    lines = []
    for k, table in enumerate(_tables(document, "lines")):
        path = f"lines[{k}]"
        lines.append(
            LineSpec(
                source=_node_index(_get(table, "from", path, int), n, path),
                target=_node_index(_get(table, "to", path, int), n, path),
                susceptance=_get(table, "susceptance", path, float),
            )
        )
    return lines


def _parse_controller(document: Dict[str, Any], grid: GridSpec) -> ControllerSpec:
    table = document.get("controller", {})
    if not isinstance(table, dict):
        raise ParseError("expected a table", field="controller")
    path = "controller"
    family = _get(table, "cost_family", path, str, QUADRATIC)
    cost = CostModel(
        tuple(grid.cost),
        family=family,
        gamma=_get(table, "gamma", path, float, 2.0),
    )
    capacity = None
    if "capacity_min" in table or "capacity_max" in table:
        lower = _numbers(
            _get(table, "capacity_min", path, list, [-np.inf] * grid.n), "controller.capacity_min"
        )
        upper = _numbers(
            _get(table, "capacity_max", path, list, [np.inf] * grid.n), "controller.capacity_max"
        )
        if len(lower) != grid.n or len(upper) != grid.n:
            raise ValidationError("capacity arrays must have one entry per node")
        capacity = Capacity(lower, upper)
    return ControllerSpec(
        kind=_get(table, "kind", path, str, DECENTRALIZED),
        h=_get(table, "h", path, float, 1.0),
        cost=cost,
        delay=_get(table, "delay", path, float, 0.0),
        capacity=capacity,
    )


def _parse_comm(document: Dict[str, Any], grid: GridSpec) -> CommGraph:
    table = document.get("comm", {})
    if not isinstance(table, dict):
        raise ParseError("expected a table", field="comm")
    if "links" in table:
        links = _pairs(table["links"], grid.n, "comm.links")
    else:
        links = [line.pair for line in grid.lines]
    failed = _pairs(table.get("failed", []), grid.n, "comm.failed")
    return CommGraph(grid.n, tuple(links), frozenset(failed))


def _parse_sim(document: Dict[str, Any]) -> SimConfig:
    table = document.get("sim", {})
    if not isinstance(table, dict):
        raise ParseError("expected a table", field="sim")
    defaults = SimConfig()
    return SimConfig(
        dt=_get(table, "dt", "sim", float, defaults.dt),
        t_max=_get(table, "t_max", "sim", float, defaults.t_max),
        steady_eps=_get(table, "steady_eps", "sim", float, defaults.steady_eps),
        sample_every=_get(table, "sample_every", "sim", int, defaults.sample_every),
        steady_window=_get(table, "steady_window", "sim", float, defaults.steady_window),
    )


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """
    Build a Scenario from TOML text.

    Raises:
        ParseError: malformed TOML or wrongly typed fields
        ValidationError: a model invariant is violated
    """
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        line = getattr(e, "lineno", None)
        if line is None:
            match = re.search(r"line (\d+)", str(e))
            line = int(match.group(1)) if match else None
        raise ParseError(f"invalid scenario syntax: {e}", line=line) from e

    nodes = _parse_nodes(document)
    if not nodes:
        raise ParseError("scenario defines no nodes", field="nodes")
    power = np.array([node.power for node in nodes])
    if abs(float(power.sum())) > BALANCE_TOL * max(1.0, float(np.abs(power).sum())):
        raise UnbalancedError(f"unbalanced initial power (sum = {power.sum():.6g})")

    grid = GridSpec(tuple(nodes), tuple(_parse_lines(document, len(nodes))))

    perturbations = []
    for k, table in enumerate(_tables(document, "perturbations")):
        path = f"perturbations[{k}]"
        perturbations.append(
            Perturbation(
                node=_node_index(_get(table, "node", path, int), grid.n, path),
                delta_p=_get(table, "delta_p", path, float),
                at_time=_get(table, "at_time", path, float, 0.0),
            )
        )

    return Scenario(
        name=_get(document, "name", "", str, name),
        grid=grid,
        perturbations=tuple(perturbations),
        controller=_parse_controller(document, grid),
        comm=_parse_comm(document, grid),
        sim=_parse_sim(document),
        description=_get(document, "description", "", str, ""),
    )


def load_scenario(path: str) -> Scenario:
    """Read and validate a scenario file."""
    scenario_path = Path(path)
    if not scenario_path.is_file():
        raise ParseError(f"scenario file '{path}' does not exist")
    return parse_scenario(scenario_path.read_text(), name=scenario_path.stem)


def scenario_document(scenario: Scenario) -> Dict[str, Any]:
    """The TOML document for a scenario, 1-based ids, every section explicit."""
    grid = scenario.grid
    controller = scenario.controller
    controller_table: Dict[str, Any] = {
        "kind": controller.kind,
        "h": controller.h,
        "delay": controller.delay,
        "cost_family": controller.cost.family,
        "gamma": controller.cost.gamma,
    }
    if controller.capacity is not None:
        controller_table["capacity_min"] = list(controller.capacity.lower)
        controller_table["capacity_max"] = list(controller.capacity.upper)

    return {
        "name": scenario.name,
        "description": scenario.description,
        "nodes": [
            {
                "kind": node.kind,
                "inertia": node.inertia,
                "damping": node.damping,
                "power": node.power,
                "cost": node.cost,
            }
            for node in grid.nodes
        ],
        "lines": [
            {"from": line.source + 1, "to": line.target + 1, "susceptance": line.susceptance}
            for line in grid.lines
        ],
        "perturbations": [
            {"node": p.node + 1, "delta_p": p.delta_p, "at_time": p.at_time}
            for p in scenario.perturbations
        ],
        "controller": controller_table,
        "comm": {
            "links": [[i + 1, j + 1] for i, j in scenario.comm.links],
            "failed": [[i + 1, j + 1] for i, j in sorted(scenario.comm.failed)],
        },
        "sim": {
            "dt": scenario.sim.dt,
            "t_max": scenario.sim.t_max,
            "steady_eps": scenario.sim.steady_eps,
            "sample_every": scenario.sim.sample_every,
            "steady_window": scenario.sim.steady_window,
        },
    }


def dump_scenario(scenario: Scenario, path: str) -> str:
    """Write a scenario file that load_scenario reads back unchanged."""
    scenario_path = Path(path).resolve()
    scenario_path.parent.mkdir(parents=True, exist_ok=True)
    with open(scenario_path, "wb") as f:
        tomli_w.dump(scenario_document(scenario), f)
    return str(scenario_path)


def bundled_scenario(name: str) -> str:
    """Path of a scenario shipped with the package (e.g. "tennode", "twonode")."""
    resource = resources.files("gridfreq") / "scenarios" / f"{name}.scenario"
    if not resource.is_file():
        raise ParseError(f"no bundled scenario named '{name}'")
    return str(resource)


def build_report(
    scenario: Scenario,
    trajectory: Trajectory,
    convergence: Optional[float] = None,
) -> RunReport:
    """Summarise a finished simulation against the dispatch optimum and the gap bound."""
    cost = scenario.controller.cost
    u = trajectory.u[-1]
    total = evaluate_cost(u, cost)
    optimal = optimal_convex(cost, scenario.delta_total, scenario.controller.capacity).total_cost
    gap = total - optimal

    delta = float(sum(abs(p.delta_p) for p in scenario.perturbations))
    grid = scenario.grid
    if delta > 0:
        bound = cost_gap_bound(
            delta,
            grid.n,
            scenario.controller.h,
            float(grid.susceptance.min()),
            algebraic_connectivity(grid),
        )
    else:
        bound = 0.0

    return RunReport(
        u=u,
        total_cost=total,
        optimal_cost=optimal,
        gap=gap,
        bound=bound,
        convergence_time=convergence,
        marginal_spread=marginal_spread(u, cost),
        component_prices=component_prices(u, cost, scenario.comm),
        converged=trajectory.converged,
        bound_satisfied=gap <= bound + 1e-9,
    )
