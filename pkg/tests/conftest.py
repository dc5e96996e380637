from __future__ import annotations

import numpy as np
import pytest

from privadmm.graph import Topology, build_topology
from privadmm.objectives import (
    DecompositionSchedule,
    ObjectiveHandle,
    consensus_objective,
)
from privadmm.solver import ConsensusProblem

PAPER_EDGES = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 6), (1, 4)]


def paper_targets() -> list[np.ndarray]:
    return [np.array([0.1 * (i - 1) + 0.1, 0.1 * (i - 1) + 0.2]) for i in range(1, 7)]


@pytest.fixture(scope="session")
def six_agent_topology() -> Topology:
    return build_topology(6, PAPER_EDGES)


@pytest.fixture(scope="session")
def six_agent_objectives() -> tuple[ObjectiveHandle, ...]:
    return tuple(ObjectiveHandle.from_quadratic(consensus_objective(y))
                 for y in paper_targets())


def make_paper_problem(
    topology: Topology,
    objectives,
    seed: int = 0,
    c_scale: float = 1.0,
    d_scale: float = 1.0,
    static: bool = False,
    m_f: float = 1.0,
) -> ConsensusProblem:
    """Seeded six-agent instance: random starts and split schedules."""
    rng = np.random.default_rng(seed)
    n = objectives[0].dimension
    n_agents = topology.num_agents
    x0a = tuple(rng.uniform(-1, 1, n) for _ in range(n_agents))
    x0b = tuple(rng.uniform(-1, 1, n) for _ in range(n_agents))
    if static:
        schedules = tuple(
            DecompositionSchedule.static(n, m_f, d=rng.uniform(-d_scale, d_scale, n))
            for _ in range(n_agents)
        )
    else:
        schedules = tuple(
            DecompositionSchedule(m_f=m_f,
                                  c=rng.uniform(-c_scale, c_scale, n),
                                  d=rng.uniform(-d_scale, d_scale, n))
            for _ in range(n_agents)
        )
    return ConsensusProblem(topology=topology, objectives=tuple(objectives),
                            x0_alpha=x0a, x0_beta=x0b, schedules=schedules)


def random_connected_topology(rng: np.random.Generator, n_agents: int,
                              extra_edges: int = 2) -> Topology:
    """Random spanning tree plus a few chords."""
    edges = set()
    for v in range(2, n_agents + 1):
        u = int(rng.integers(1, v))
        edges.add((u, v))
    attempts = 0
    while len(edges) < n_agents - 1 + extra_edges and attempts < 50:
        attempts += 1
        u, v = sorted(rng.choice(np.arange(1, n_agents + 1), size=2, replace=False))
        if u != v:
            edges.add((int(u), int(v)))
    return build_topology(n_agents, sorted(edges))
