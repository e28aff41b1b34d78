"""
Communication topology, link failures, bridging sets E*/V* and link
criticality ranking.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, FrozenSet, Iterable, List, Optional, Tuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from .errors import UnbalancedError, UnjoinableError, ValidationError
from .grid import GridSpec, incidence_matrix

if TYPE_CHECKING:
    from .control import CostModel

Pair = Tuple[int, int]


def _pair(link: Iterable[int]) -> Pair:
    i, j = (int(x) for x in link)
    return (min(i, j), max(i, j))


@dataclass(frozen=True)
class CommGraph:
    """
    Undirected communication links between n nodes and the subset that failed.

    Pairs are stored normalised as (low, high), 0-based.
    """

    n: int
    links: Tuple[Pair, ...]
    failed: FrozenSet[Pair] = frozenset()

    def __post_init__(self):
        links = tuple(dict.fromkeys(_pair(link) for link in self.links))
        failed = frozenset(_pair(link) for link in self.failed)
        for i, j in links:
            if i == j or not (0 <= i < self.n and 0 <= j < self.n):
                raise ValidationError(f"invalid communication link ({i + 1}, {j + 1})")
        unknown = failed - set(links)
        if unknown:
            i, j = sorted(unknown)[0]
            raise ValidationError(f"failed link ({i + 1}, {j + 1}) is not a communication link")
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "failed", failed)

    @classmethod
    def from_grid(cls, grid: GridSpec, failed: Iterable[Iterable[int]] = ()) -> "CommGraph":
        """Communication network mirroring the power lines."""
        return cls(grid.n, tuple(line.pair for line in grid.lines), frozenset(_pair(f) for f in failed))

    def with_failures(self, pairs: Iterable[Iterable[int]]) -> "CommGraph":
        return CommGraph(self.n, self.links, self.failed | {_pair(p) for p in pairs})

    @property
    def surviving(self) -> Tuple[Pair, ...]:
        return tuple(link for link in self.links if link not in self.failed)

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.surviving)
        return graph

    def surviving_laplacian(self) -> np.ndarray:
        L = np.zeros((self.n, self.n))
        for i, j in self.surviving:
            L[i, i] += 1.0
            L[j, j] += 1.0
            L[i, j] -= 1.0
            L[j, i] -= 1.0
        return L


@dataclass(frozen=True)
class BridgeSets:
    """
    components: partition of the nodes by surviving links
    e_star: power lines (indices) whose parallel links re-join the components
    v_star: endpoints of e_star
    """

    components: Tuple[FrozenSet[int], ...]
    e_star: Tuple[int, ...]
    v_star: FrozenSet[int]

    def e_star_pairs(self, grid: GridSpec) -> Tuple[Pair, ...]:
        return tuple(grid.lines[l].pair for l in self.e_star)


@dataclass(frozen=True)
class LinkScore:
    line: int
    source: int
    target: int
    susceptance: float
    flow_change: float
    score: float


def components(comm: CommGraph) -> Tuple[FrozenSet[int], ...]:
    """Connected components of the surviving graph, ordered by smallest node."""
    parts = (frozenset(c) for c in nx.connected_components(comm.to_graph()))
    return tuple(sorted(parts, key=min))


def bridging_sets(comm: CommGraph, grid: GridSpec) -> BridgeSets:
    """
    Smallest set of power-line-parallel links that merges every component.

    Kruskal over the component quotient graph; among candidates the line with
    the largest susceptance wins, then the lowest line index.

    Raises:
        UnjoinableError: if power lines cannot connect all components
    """
    parts = components(comm)
    if len(parts) == 1:
        return BridgeSets(parts, (), frozenset())

    label = {node: c for c, part in enumerate(parts) for node in part}
    merged = UnionFind(range(len(parts)))
    order = sorted(range(grid.m), key=lambda l: (-grid.lines[l].susceptance, l))

    e_star: List[int] = []
    for l in order:
        line = grid.lines[l]
        ci, cj = label[line.source], label[line.target]
        if merged[ci] != merged[cj]:
            merged.union(ci, cj)
            e_star.append(l)
        if len(e_star) == len(parts) - 1:
            break

    if len(e_star) != len(parts) - 1:
        raise UnjoinableError("communication components cannot be joined through power lines")

    v_star = frozenset(n for l in e_star for n in (grid.lines[l].source, grid.lines[l].target))
    return BridgeSets(parts, tuple(sorted(e_star)), v_star)


def rank_links(
    grid: GridSpec,
    p0: np.ndarray,
    p: np.ndarray,
    u_expected: Optional[np.ndarray] = None,
    h: float = 1.0,
) -> List[LinkScore]:
    """
    Rank lines by the marginal-cost gap their parallel link's failure would open.

    y = D (C D)^+ (p + u - p0) with D = diag(sqrt(B)) is the steady change of
    line flows; a failed link across line l separates prices by h |y_l| / B_l.

    Args:
        u_expected: steady controllable power; optimal dispatch when omitted

    Raises:
        UnbalancedError: if p + u does not sum to zero
    """
    p0 = np.asarray(p0, dtype=float)
    p = np.asarray(p, dtype=float)
    if u_expected is None:
        from .dispatch import optimal_quadratic

        u_expected = optimal_quadratic(grid.cost, float(np.sum(p - p0))).u
    u = np.asarray(u_expected, dtype=float)

    scale = max(1.0, float(np.sum(np.abs(p))))
    if abs(float(np.sum(p + u))) > 1e-8 * scale:
        raise UnbalancedError("steady injections p + u do not balance")

    B = grid.susceptance
    D = np.diag(np.sqrt(B))
    y = D @ np.linalg.pinv(incidence_matrix(grid) @ D) @ (p + u - p0)

    scores = [
        LinkScore(
            line=l,
            source=line.source,
            target=line.target,
            susceptance=line.susceptance,
            flow_change=float(y[l]),
            score=float(h * abs(y[l]) / B[l]),
        )
        for l, line in enumerate(grid.lines)
    ]
    return sorted(scores, key=lambda s: (-s.score, s.line))


def component_prices(
    u: np.ndarray, cost: "CostModel", comm: CommGraph
) -> List[Tuple[FrozenSet[int], float]]:
    """Mean marginal cost g_j(u_j) inside each communication component."""
    marginal = cost.marginal(u)
    return [(part, float(np.mean(marginal[sorted(part)]))) for part in components(comm)]
