"""Communication graphs, their virtual two-node-per-agent expansion, and
edge-node incidence matrices.

Agents are numbered 1..N.  Undirected edges are stored as ordered pairs
(i, j) with i < j; every edge is oriented from its smaller to its larger
endpoint, which fixes the sign convention of the incidence matrix.

The virtual expansion replaces each agent i with a public node (index
2i - 1) and a private node (index 2i) joined by an edge; public nodes
inherit the base edges.  This is the 2N-node graph on which the
decomposed iteration is analyzed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GraphError",
    "InvalidEdge",
    "DisconnectedGraph",
    "Topology",
    "VirtualTopology",
    "build_topology",
    "expand_virtual",
    "incidence_matrix",
    "degree_matrix",
    "laplacian",
]


class GraphError(ValueError):
    """Base class for topology validation failures."""


class InvalidEdge(GraphError):
    """Edge with an out-of-range endpoint, a self-loop, or a duplicate."""


class DisconnectedGraph(GraphError):
    """The graph does not connect all agents; consensus is ill-posed."""


@dataclass(frozen=True)
class Topology:
    """Validated undirected communication graph over agents 1..num_agents.

    Immutable after construction; safe to share across threads.
    """

    num_agents: int
    edges: tuple[tuple[int, int], ...]
    _neighbors: dict[int, tuple[int, ...]] = field(repr=False, compare=False, default=None)

    @property
    def num_nodes(self) -> int:
        return self.num_agents

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Sorted neighbor ids of agent i."""
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        return len(self._neighbors[i])

    def degrees(self) -> list[int]:
        return [self.degree(i) for i in range(1, self.num_agents + 1)]


@dataclass(frozen=True)
class VirtualTopology:
    """2N-node expansion of a base topology under function decomposition.

    Node 2i - 1 is the public (alpha) node of agent i, node 2i its private
    (beta) node.  Edges: one public-public edge per base edge, plus the
    internal (2i - 1, 2i) edge per agent, in that order.
    """

    base: Topology
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    _neighbors: dict[int, tuple[int, ...]] = field(repr=False, compare=False, default=None)

    @staticmethod
    def alpha_index(agent: int) -> int:
        return 2 * agent - 1

    @staticmethod
    def beta_index(agent: int) -> int:
        return 2 * agent

    @staticmethod
    def label(node: int) -> tuple[int, str]:
        """Map a virtual node index back to (agent id, 'alpha'|'beta')."""
        agent, rem = divmod(node + 1, 2)
        return (agent, "alpha") if rem == 0 else (agent, "beta")

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self._neighbors[node]

    def degree(self, node: int) -> int:
        return len(self._neighbors[node])

    def degrees(self) -> list[int]:
        return [self.degree(v) for v in range(1, self.num_nodes + 1)]


def _neighbor_map(num_nodes: int, edges) -> dict[int, tuple[int, ...]]:
    nbrs: dict[int, set[int]] = {v: set() for v in range(1, num_nodes + 1)}
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    return {v: tuple(sorted(s)) for v, s in nbrs.items()}


def _is_connected(num_nodes: int, neighbors: dict[int, tuple[int, ...]]) -> bool:
    if num_nodes <= 1:
        return True
    seen = {1}
    stack = [1]
    while stack:
        v = stack.pop()
        for w in neighbors[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == num_nodes


def build_topology(n_agents: int, edges) -> Topology:
    """Validate and freeze a communication graph.

    Parameters
    ----------
    n_agents : int
        Number of agents, >= 1.
    edges : iterable of (int, int)
        Undirected edges with 1-based endpoints.  Pairs are normalized to
        (min, max); input order is preserved.

    Raises
    ------
    InvalidEdge
        On self-loops, out-of-range endpoints, or duplicates.
    DisconnectedGraph
        If some agent is unreachable from agent 1.
    """
    if n_agents < 1:
        raise GraphError(f"need at least one agent, got {n_agents}")
    normalized: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise InvalidEdge(f"self-loop at agent {i}")
        if not (1 <= i <= n_agents and 1 <= j <= n_agents):
            raise InvalidEdge(f"edge ({i}, {j}) out of range 1..{n_agents}")
        if i > j:
            i, j = j, i
        if (i, j) in seen:
            raise InvalidEdge(f"duplicate edge ({i}, {j})")
        seen.add((i, j))
        normalized.append((i, j))
    nbrs = _neighbor_map(n_agents, normalized)
    if not _is_connected(n_agents, nbrs):
        raise DisconnectedGraph(f"graph on {n_agents} agents is not connected")
    t = Topology(num_agents=n_agents, edges=tuple(normalized))
    object.__setattr__(t, "_neighbors", nbrs)
    return t


def expand_virtual(t: Topology) -> VirtualTopology:
    """Build the 2N-node virtual graph for a base topology.

    Public-public edges come first (in base edge order), then one internal
    (alpha, beta) edge per agent in agent order.  Each edge keeps the
    smaller-index-first orientation.
    """
    num_nodes = 2 * t.num_agents
    vedges: list[tuple[int, int]] = []
    for i, j in t.edges:
        vedges.append((VirtualTopology.alpha_index(i), VirtualTopology.alpha_index(j)))
    for i in range(1, t.num_agents + 1):
        vedges.append((VirtualTopology.alpha_index(i), VirtualTopology.beta_index(i)))
    nbrs = _neighbor_map(num_nodes, vedges)
    vt = VirtualTopology(base=t, num_nodes=num_nodes, edges=tuple(vedges))
    object.__setattr__(vt, "_neighbors", nbrs)
    return vt


def incidence_matrix(graph: Topology | VirtualTopology, n: int) -> np.ndarray:
    """Dense edge-node incidence matrix with n x n identity blocks.

    Row block m carries +I at the origin (smaller index) of edge m and -I
    at its terminus, so the product with a stacked node-state vector gives
    the per-edge differences.  A.T @ A equals the graph Laplacian tensored
    with the n x n identity.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    num_edges = len(graph.edges)
    a = np.zeros((num_edges, graph.num_nodes))
    for m, (i, j) in enumerate(graph.edges):
        a[m, i - 1] = 1.0
        a[m, j - 1] = -1.0
    return np.kron(a, np.eye(n))


def degree_matrix(graph: Topology | VirtualTopology, n: int) -> np.ndarray:
    """Block-diagonal degree matrix, block i = degree(i) * I_n."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    degs = [graph.degree(v) for v in range(1, graph.num_nodes + 1)]
    return np.kron(np.diag(np.asarray(degs, dtype=float)), np.eye(n))


def laplacian(graph: Topology | VirtualTopology) -> np.ndarray:
    """Plain (n=1) graph Laplacian D - Adj, built directly from the edge list."""
    lap = np.zeros((graph.num_nodes, graph.num_nodes))
    for i, j in graph.edges:
        lap[i - 1, i - 1] += 1.0
        lap[j - 1, j - 1] += 1.0
        lap[i - 1, j - 1] -= 1.0
        lap[j - 1, i - 1] -= 1.0
    return lap
