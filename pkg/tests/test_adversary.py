from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from privadmm.adversary import (
    AdversaryView,
    IncompleteLog,
    InsufficientObservation,
    baseline_leak,
    counting_audit,
    dual_reconstruction,
    evaluate_baseline_leak,
    kkt_recovery_at_optimum,
    message_privacy_scan,
)
from privadmm.graph import build_topology
from privadmm.objectives import ObjectiveHandle, consensus_objective
from privadmm.solver import ConsensusProblem, NotConverged, SolverConfig, run

from conftest import make_paper_problem


@pytest.fixture(scope="module")
def paper_baseline_trace(six_agent_topology, six_agent_objectives):
    problem = make_paper_problem(six_agent_topology, six_agent_objectives, seed=21)
    trace = run("baseline", problem, SolverConfig(primal_tolerance=1e-8))
    assert trace.converged
    return trace


@pytest.fixture(scope="module")
def paper_decomposed_trace(six_agent_topology, six_agent_objectives):
    problem = make_paper_problem(six_agent_topology, six_agent_objectives,
                                 seed=21, c_scale=0.1)
    trace = run("decomposed", problem, SolverConfig(primal_tolerance=1e-8))
    assert trace.converged
    return trace


def star3_problem(seed=0):
    """Three agents in a path 2 - 1 - 3: agent 1 sees everyone."""
    rng = np.random.default_rng(seed)
    top = build_topology(3, [(1, 2), (1, 3)])
    objectives = tuple(ObjectiveHandle.from_quadratic(consensus_objective(rng.uniform(-1, 1, 2)))
                       for _ in range(3))
    return ConsensusProblem(
        topology=top, objectives=objectives,
        x0_alpha=tuple(rng.uniform(-1, 1, 2) for _ in range(3)),
    )


def test_eavesdropper_recovers_all_baseline_gradients(paper_baseline_trace):
    worst = evaluate_baseline_leak(paper_baseline_trace, "eavesdropper")
    assert set(worst) == set(range(1, 7))
    assert max(worst.values()) <= 1e-8


def test_leak_covers_every_iteration(paper_baseline_trace):
    view = AdversaryView.from_trace(paper_baseline_trace, "eavesdropper")
    estimates = baseline_leak(view, 3, paper_baseline_trace.rho,
                              paper_baseline_trace.gamma_alpha[2])
    assert [e.iteration for e in estimates] == list(range(1, paper_baseline_trace.iterations + 1))


def test_neighbor_attacks_two_agent_graph():
    rng = np.random.default_rng(1)
    top = build_topology(2, [(1, 2)])
    objectives = tuple(ObjectiveHandle.from_quadratic(consensus_objective(rng.uniform(-1, 1, 2)))
                       for _ in range(2))
    problem = ConsensusProblem(topology=top, objectives=objectives,
                               x0_alpha=(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)))
    trace = run("baseline", problem, SolverConfig(primal_tolerance=1e-8))
    view = AdversaryView.from_trace(trace, 1)
    estimates = baseline_leak(view, 2, trace.rho, trace.gamma_alpha[1])
    for it, est in estimates:
        truth = objectives[1].gradient(trace.snapshots[it][1].x_alpha)
        assert np.linalg.norm(est - truth) <= 1e-8 * max(np.linalg.norm(truth), 1.0)


def test_gamma_knowledge_toggle():
    problem = star3_problem()
    trace = run("baseline", problem, SolverConfig(primal_tolerance=1e-8))
    view = AdversaryView.from_trace(trace, 1)
    # private gamma: no recovery
    with pytest.raises(InsufficientObservation):
        baseline_leak(view, 2, trace.rho, None)
    # public gamma (the protocol's assumption): exact recovery
    estimates = baseline_leak(view, 2, trace.rho, trace.gamma_alpha[1])
    truth = problem.objectives[1].gradient(trace.snapshots[-1][1].x_alpha)
    assert np.linalg.norm(estimates[-1].estimate - truth) <= 1e-8


def test_observer_missing_neighborhood_channel():
    # true path 1 - 2 - 3: agent 1 never sees agent 3's stream
    rng = np.random.default_rng(2)
    top = build_topology(3, [(1, 2), (2, 3)])
    objectives = tuple(ObjectiveHandle.from_quadratic(consensus_objective(rng.uniform(-1, 1, 2)))
                       for _ in range(3))
    problem = ConsensusProblem(topology=top, objectives=objectives,
                               x0_alpha=tuple(rng.uniform(-1, 1, 2) for _ in range(3)))
    trace = run("baseline", problem, SolverConfig(max_iters=30, primal_tolerance=1e-12))
    view = AdversaryView.from_trace(trace, 1)
    with pytest.raises(InsufficientObservation):
        baseline_leak(view, 2, trace.rho, trace.gamma_alpha[1])
    with pytest.raises(InsufficientObservation):
        view.x_stream(3)


def test_counting_audit_paper_numbers():
    report = counting_audit(2, 10)
    assert report.equations_count == 40
    assert report.unknowns_lower_bound == 64
    assert report.underdetermined


def test_counting_audit_smallest_case():
    report = counting_audit(1, 1)
    assert report.equations_count == 2
    assert report.unknowns_lower_bound == 6
    assert report.underdetermined


@pytest.mark.parametrize("n", [1, 2, 3, 7])
@pytest.mark.parametrize("K", [1, 10, 100])
def test_counting_deficit_always_positive(n, K):
    report = counting_audit(n, K)
    assert report.deficit == n * K + n + 2
    assert report.deficit > 0


def test_counting_audit_rejects_bad_window():
    with pytest.raises(ValueError):
        counting_audit(0, 5)
    with pytest.raises(ValueError):
        counting_audit(2, 0)


def test_kkt_recovery_paper_instance(paper_decomposed_trace, six_agent_objectives):
    view = AdversaryView.from_trace(paper_decomposed_trace, "eavesdropper")
    x_opt = np.array([0.35, 0.45])
    # agent 1's true gradient at the optimum: 2([0.35, 0.45] - [0.1, 0.2])
    assert np.allclose(six_agent_objectives[0].gradient(x_opt), [0.5, 0.5], atol=1e-12)
    for j in range(1, 7):
        rec = kkt_recovery_at_optimum(view, j, paper_decomposed_trace)
        truth = six_agent_objectives[j - 1].gradient(x_opt)
        assert np.linalg.norm(rec.estimate - truth) <= 1e-4
        assert rec.residual <= 1e-4
        assert rec.internal_dual_norm >= 0.0


def test_kkt_recovery_symmetric_instance(six_agent_topology):
    y = np.array([0.2, -0.4])
    objectives = tuple(ObjectiveHandle.from_quadratic(consensus_objective(y))
                       for _ in range(6))
    problem = make_paper_problem(six_agent_topology, objectives, seed=3, c_scale=0.1)
    trace = run("decomposed", problem, SolverConfig(primal_tolerance=1e-8))
    view = AdversaryView.from_trace(trace, "eavesdropper")
    for j in (1, 4):
        rec = kkt_recovery_at_optimum(view, j, trace)
        assert np.linalg.norm(rec.estimate) <= 1e-5


def test_kkt_recovery_requires_convergence(six_agent_topology, six_agent_objectives):
    problem = make_paper_problem(six_agent_topology, six_agent_objectives, seed=21)
    trace = run("decomposed", problem, SolverConfig(max_iters=4, primal_tolerance=1e-14))
    view = AdversaryView.from_trace(trace, "eavesdropper")
    with pytest.raises(NotConverged):
        kkt_recovery_at_optimum(view, 1, trace)


def test_dual_reconstruction_is_bitwise(paper_decomposed_trace):
    view = AdversaryView.from_trace(paper_decomposed_trace, "eavesdropper")
    streams = dual_reconstruction(view, paper_decomposed_trace.rho)
    top = paper_decomposed_trace.problem.topology
    for i in range(1, 7):
        for j in top.neighbors(i):
            replay = streams[(i, j)]
            for k, states in enumerate(paper_decomposed_trace.snapshots):
                assert np.array_equal(replay[k], states[i - 1].lambda_alpha[j])


def test_dual_reconstruction_base_case(paper_decomposed_trace):
    view = AdversaryView.from_trace(paper_decomposed_trace, "eavesdropper")
    streams = dual_reconstruction(view, paper_decomposed_trace.rho)
    states0 = paper_decomposed_trace.snapshots[0]
    for (i, j), replay in streams.items():
        expected = paper_decomposed_trace.rho * (states0[i - 1].x_alpha - states0[j - 1].x_alpha)
        assert np.array_equal(replay[0], expected)


def test_missing_message_raises_incomplete_log():
    rng = np.random.default_rng(5)
    top = build_topology(2, [(1, 2)])
    objectives = tuple(ObjectiveHandle.from_quadratic(consensus_objective(rng.uniform(-1, 1, 2)))
                       for _ in range(2))
    problem = ConsensusProblem(topology=top, objectives=objectives,
                               x0_alpha=(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)))
    trace = run("baseline", problem, SolverConfig(max_iters=6, primal_tolerance=1e-14))
    view = AdversaryView.from_trace(trace, "eavesdropper")
    dropped = tuple(m for m in view.messages if not (m.sender == 1 and m.iteration == 3))
    broken = replace(view, messages=dropped)
    with pytest.raises(IncompleteLog):
        broken.x_stream(1)
    with pytest.raises(IncompleteLog):
        dual_reconstruction(broken, trace.rho)


def test_agent_view_is_restricted(paper_decomposed_trace):
    view = AdversaryView.from_trace(paper_decomposed_trace, 2)
    incident = set(paper_decomposed_trace.problem.topology.neighbors(2)) | {2}
    for m in view.messages:
        assert m.sender == 2 or m.receiver == 2
    # neighbor streams are visible, distant ones are not (agent 5 is two hops away)
    view.x_stream(1)
    with pytest.raises(InsufficientObservation):
        view.x_stream(5)
    assert view.own_states is not None
    assert 5 not in incident


def test_decomposition_seeds_change_messages_not_limit(six_agent_topology, six_agent_objectives):
    config = SolverConfig(primal_tolerance=1e-8)
    limits = []
    logs = []
    for seed in (31, 32):
        rng = np.random.default_rng(7)  # same starts
        x0a = tuple(rng.uniform(-1, 1, 2) for _ in range(6))
        x0b = tuple(rng.uniform(-1, 1, 2) for _ in range(6))
        srng = np.random.default_rng(seed)  # different split randomness
        from privadmm.objectives import DecompositionSchedule

        schedules = tuple(DecompositionSchedule.random(2, 1.0, srng, c_scale=0.1)
                          for _ in range(6))
        problem = ConsensusProblem(topology=six_agent_topology,
                                   objectives=tuple(six_agent_objectives),
                                   x0_alpha=x0a, x0_beta=x0b, schedules=schedules)
        trace = run("decomposed", problem, config)
        assert trace.converged
        limits.append([(s.x_alpha + s.x_beta) / 2 for s in trace.final_states])
        logs.append([m.payload for m in trace.messages if m.iteration == 1])
    assert not all(np.array_equal(a, b) for a, b in zip(*logs))
    for a, b in zip(*limits):
        assert np.linalg.norm(a - b) <= 1e-5


def test_message_privacy_scan(paper_decomposed_trace):
    scan = message_privacy_scan(paper_decomposed_trace)
    assert scan.passed
    expected = 2 * len(paper_decomposed_trace.problem.topology.edges) \
        * (paper_decomposed_trace.iterations + 1)
    assert scan.messages_checked == expected
