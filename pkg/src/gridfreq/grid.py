"""
Power network description and the spectral primitives built on it.

Nodes and lines are stored 0-based; scenario files use 1-based ids and are
converted in :mod:`gridfreq.scenario`.
"""

from dataclasses import dataclass, replace
from typing import Tuple

import networkx as nx
import numpy as np
import scipy.linalg

from .errors import NotConnectedError, ValidationError

GENERATOR = "generator"
LOAD = "load"
NODE_KINDS = (GENERATOR, LOAD)

# |lambda| below ZERO_EIG_RTOL * max|lambda| counts as a zero eigenvalue
ZERO_EIG_RTOL = 1e-9


@dataclass(frozen=True)
class NodeParams:
    """
    Parameters of one bus.

    Args:
        kind: "generator" (swing dynamics) or "load" (algebraic frequency)
        inertia: M_j, only meaningful for generators
        damping: droop / load-frequency coefficient D_j
        power: fixed injection p_j, positive for net generation
        cost: quadratic cost coefficient a_j
    """

    kind: str
    inertia: float
    damping: float
    power: float
    cost: float

    @property
    def is_generator(self) -> bool:
        return self.kind == GENERATOR


@dataclass(frozen=True)
class LineSpec:
    """A lossless line oriented source -> target with susceptance magnitude."""

    source: int
    target: int
    susceptance: float

    @property
    def pair(self) -> Tuple[int, int]:
        return (min(self.source, self.target), max(self.source, self.target))


@dataclass(frozen=True)
class GridSpec:
    """
    Immutable connected power network G(V, E).

    Raises:
        ValidationError: on malformed nodes or lines
        NotConnectedError: if the line set does not connect every node
    """

    nodes: Tuple[NodeParams, ...]
    lines: Tuple[LineSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "lines", tuple(self.lines))
        n, m = len(self.nodes), len(self.lines)

        if n < 2:
            raise ValidationError(f"grid needs at least 2 nodes, got {n}")
        if m < n - 1:
            raise ValidationError(f"grid with {n} nodes needs at least {n - 1} lines, got {m}")

        for j, node in enumerate(self.nodes):
            if node.kind not in NODE_KINDS:
                raise ValidationError(f"node {j + 1}: unknown kind '{node.kind}'")
            if node.is_generator and not node.inertia > 0:
                raise ValidationError(f"node {j + 1}: generator inertia must be > 0")
            if not node.damping > 0:
                raise ValidationError(f"node {j + 1}: damping must be > 0")
            if not node.cost > 0:
                raise ValidationError(f"node {j + 1}: cost coefficient must be > 0")

        seen = set()
        for l, line in enumerate(self.lines):
            if not (0 <= line.source < n and 0 <= line.target < n):
                raise ValidationError(f"line {l + 1}: endpoint out of range")
            if line.source == line.target:
                raise ValidationError(f"line {l + 1}: self-loop at node {line.source + 1}")
            if not line.susceptance > 0:
                raise ValidationError(f"line {l + 1}: susceptance must be > 0")
            if line.pair in seen:
                raise ValidationError(
                    f"line {l + 1}: parallel line between nodes "
                    f"{line.pair[0] + 1} and {line.pair[1] + 1}"
                )
            seen.add(line.pair)

        if not nx.is_connected(self.to_graph()):
            raise NotConnectedError("power grid is not connected")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.lines)

    @property
    def inertia(self) -> np.ndarray:
        return np.array([node.inertia for node in self.nodes], dtype=float)

    @property
    def damping(self) -> np.ndarray:
        return np.array([node.damping for node in self.nodes], dtype=float)

    @property
    def power(self) -> np.ndarray:
        return np.array([node.power for node in self.nodes], dtype=float)

    @property
    def cost(self) -> np.ndarray:
        return np.array([node.cost for node in self.nodes], dtype=float)

    @property
    def susceptance(self) -> np.ndarray:
        return np.array([line.susceptance for line in self.lines], dtype=float)

    @property
    def generator_mask(self) -> np.ndarray:
        return np.array([node.is_generator for node in self.nodes], dtype=bool)

    def to_graph(self) -> nx.Graph:
        """Undirected networkx view; edges carry `susceptance` and `line` index."""
        graph = nx.Graph()
        graph.add_nodes_from(range(len(self.nodes)))
        for l, line in enumerate(self.lines):
            graph.add_edge(line.source, line.target, susceptance=line.susceptance, line=l)
        return graph

    def scaled(self, alpha: float) -> "GridSpec":
        """Copy with every susceptance multiplied by alpha."""
        if not alpha > 0:
            raise ValidationError("susceptance scale must be > 0")
        lines = tuple(replace(line, susceptance=line.susceptance * alpha) for line in self.lines)
        return GridSpec(self.nodes, lines)

    def with_power(self, power: np.ndarray) -> "GridSpec":
        """Copy with the fixed injections replaced."""
        nodes = tuple(replace(node, power=float(p)) for node, p in zip(self.nodes, power))
        return GridSpec(nodes, self.lines)


@dataclass(frozen=True)
class SpectralSummary:
    lambda2_unweighted: float
    lambda2_weighted: float
    b_min: float
    pinv_max_abs: float


def incidence_matrix(grid: GridSpec) -> np.ndarray:
    """n x m signed incidence: +1 at the source row, -1 at the target row."""
    C = np.zeros((grid.n, grid.m))
    for l, line in enumerate(grid.lines):
        C[line.source, l] = 1.0
        C[line.target, l] = -1.0
    return C


def unweighted_laplacian(grid: GridSpec) -> np.ndarray:
    C = incidence_matrix(grid)
    return C @ C.T


def weighted_laplacian(grid: GridSpec) -> np.ndarray:
    """C diag(B) C^T."""
    C = incidence_matrix(grid)
    return (C * grid.susceptance) @ C.T


def _zero_threshold(eigenvalues: np.ndarray) -> float:
    return ZERO_EIG_RTOL * max(float(np.max(np.abs(eigenvalues))), np.finfo(float).tiny)


def laplacian_pinv(L: np.ndarray) -> np.ndarray:
    """
    Moore-Penrose pseudo-inverse of a connected-graph Laplacian.

    Built from the eigen-decomposition, dropping the single zero mode, so that
    L @ L^+ = I - J/n.

    Raises:
        NotConnectedError: if more than one eigenvalue is numerically zero
    """
    eigenvalues, vectors = scipy.linalg.eigh(L)
    zero = np.abs(eigenvalues) < _zero_threshold(eigenvalues)
    if zero.sum() != 1:
        raise NotConnectedError(
            f"Laplacian has {int(zero.sum())} zero eigenvalues, expected exactly 1"
        )
    keep = ~zero
    return (vectors[:, keep] / eigenvalues[keep]) @ vectors[:, keep].T


def algebraic_connectivity(grid: GridSpec, weighted: bool = False) -> float:
    """Second-smallest eigenvalue of CC^T (or CBC^T when weighted)."""
    L = weighted_laplacian(grid) if weighted else unweighted_laplacian(grid)
    eigenvalues = scipy.linalg.eigh(L, eigvals_only=True)
    return max(float(eigenvalues[1]), 0.0)


def spectral_summary(grid: GridSpec) -> SpectralSummary:
    """The quantities lambda_2, lambda'_2, b and M used by the cost-gap bound."""
    pinv = laplacian_pinv(weighted_laplacian(grid))
    return SpectralSummary(
        lambda2_unweighted=algebraic_connectivity(grid, weighted=False),
        lambda2_weighted=algebraic_connectivity(grid, weighted=True),
        b_min=float(grid.susceptance.min()),
        pinv_max_abs=float(np.max(np.abs(pinv))),
    )
