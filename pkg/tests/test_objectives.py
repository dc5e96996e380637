from __future__ import annotations

import numpy as np
import pytest

from privadmm.objectives import (
    Assumption3Report,
    DecomposedPair,
    DecompositionSchedule,
    ModulusViolation,
    ObjectiveHandle,
    QuadraticObjective,
    check_gradient,
    consensus_objective,
    decompose_at,
    verify_assumption3,
)

from conftest import paper_targets


def logcosh_objective(n: int) -> ObjectiveHandle:
    """||x||^2 + sum log cosh(x_i): modulus 2, Lipschitz 3, not quadratic."""
    return ObjectiveHandle(
        evaluator=lambda x: float(x @ x + np.sum(np.log(np.cosh(x)))),
        gradient=lambda x: 2.0 * x + np.tanh(x),
        modulus=2.0,
        lipschitz=3.0,
        dimension=n,
    )


def test_consensus_objective_fields():
    y = np.array([0.3, -0.7])
    f = consensus_objective(y)
    assert np.array_equal(f.P, 2.0 * np.eye(2))
    assert np.array_equal(f.q, -2.0 * y)
    assert f.r == pytest.approx(float(y @ y))
    handle = ObjectiveHandle.from_quadratic(f)
    assert handle.modulus == pytest.approx(2.0)
    assert handle.lipschitz == pytest.approx(2.0)


def test_consensus_objective_origin_target():
    f = consensus_objective(np.zeros(3))
    x = np.array([1.0, -2.0, 0.5])
    assert f.value(x) == pytest.approx(float(x @ x))
    assert np.allclose(f.gradient(x), 2.0 * x)


def test_consensus_objective_minimum_at_target():
    y = np.array([0.35, 0.45])
    f = consensus_objective(y)
    assert f.value(y) == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(f.gradient(y), 0.0, atol=1e-15)


def test_consensus_objective_paper_agent1():
    # first agent's target, evaluated at the origin
    f = consensus_objective(np.array([0.1, 0.2]))
    assert f.value(np.zeros(2)) == pytest.approx(0.05)


def test_consensus_objective_rejects_nonfinite():
    with pytest.raises(ValueError):
        consensus_objective(np.array([np.nan, 0.0]))


def test_symmetric_split_of_squared_norm():
    f = ObjectiveHandle.from_quadratic(consensus_objective(np.zeros(2)))
    sched = DecompositionSchedule.static(2, m_f=1.0)
    pair = decompose_at(f, sched, 0)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.standard_normal(2)
        assert pair.alpha(x) == pytest.approx(0.5 * float(x @ x))
        assert pair.beta(x) == pytest.approx(0.5 * float(x @ x))


def test_private_part_closed_form():
    # f = ||x - y||^2 with m_f = 1 and b = 0 leaves 0.5 x.x - 2 y.x + y.y
    y = np.array([0.4, -1.2])
    f = ObjectiveHandle.from_quadratic(consensus_objective(y))
    pair = decompose_at(f, DecompositionSchedule.static(2, m_f=1.0), 7)
    beta = pair.beta.quadratic
    assert np.array_equal(beta.P, np.eye(2))
    assert np.array_equal(beta.q, -2.0 * y)
    assert beta.r == pytest.approx(float(y @ y))
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.standard_normal(2)
        assert pair.alpha(x) + pair.beta(x) == pytest.approx(f(x), abs=1e-12)


def test_modulus_violation():
    q = QuadraticObjective(P=1.5 * np.eye(2), q=np.zeros(2))
    f = ObjectiveHandle.from_quadratic(q)
    with pytest.raises(ModulusViolation):
        decompose_at(f, DecompositionSchedule.static(2, m_f=1.0), 0)


def test_exact_modulus_boundary_allowed():
    q = QuadraticObjective(P=2.0 * np.eye(2), q=np.zeros(2))
    pair = decompose_at(ObjectiveHandle.from_quadratic(q),
                        DecompositionSchedule.static(2, m_f=1.0), 0)
    assert pair.beta.modulus == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(3))
def test_split_exactness_everywhere(seed):
    rng = np.random.default_rng(40 + seed)
    n = int(rng.integers(1, 5))
    m = rng.standard_normal((n, n))
    p = m @ m.T + 3.0 * np.eye(n)
    f = ObjectiveHandle.from_quadratic(QuadraticObjective(P=p, q=rng.standard_normal(n),
                                                          r=float(rng.standard_normal())))
    sched = DecompositionSchedule.random(n, m_f=1.0, rng=rng)
    for k in (0, 1, 5, 50):
        pair = decompose_at(f, sched, k)
        for _ in range(25):
            x = 3.0 * rng.standard_normal(n)
            fx = f(x)
            assert abs(pair.alpha(x) + pair.beta(x) - fx) <= 1e-12 * (1.0 + abs(fx))


def test_split_exactness_generic_objective():
    f = logcosh_objective(3)
    rng = np.random.default_rng(5)
    sched = DecompositionSchedule.random(3, m_f=1.0, rng=rng)
    pair = decompose_at(f, sched, 2)
    for _ in range(20):
        x = rng.standard_normal(3)
        fx = f(x)
        assert abs(pair.alpha(x) + pair.beta(x) - fx) <= 1e-12 * (1.0 + abs(fx))
        assert np.allclose(pair.alpha.gradient(x) + pair.beta.gradient(x),
                           f.gradient(x), atol=1e-12)


def test_assumption3_paper_schedule_passes():
    f = ObjectiveHandle.from_quadratic(consensus_objective(np.array([0.2, 0.9])))
    rng = np.random.default_rng(1)
    sched = DecompositionSchedule.random(2, m_f=1.0, rng=rng)
    pair = decompose_at(f, sched, 4)
    report = verify_assumption3(pair, m_f=1.0, L=1.0)
    assert report == Assumption3Report(True, True, True, True, True)
    assert report.passed


def test_assumption3_flat_alpha_fails_condition_one():
    n = 2
    flat = QuadraticObjective(P=np.zeros((n, n)), q=np.ones(n))
    f = consensus_objective(np.zeros(n))
    pair = DecomposedPair(
        alpha=ObjectiveHandle.from_quadratic(flat),
        beta=ObjectiveHandle.from_quadratic(f),
        iteration=0,
    )
    report = verify_assumption3(pair, m_f=1.0, L=2.0)
    assert not report.alpha_strongly_convex
    assert not report.passed


def test_assumption3_divergent_schedule_fails_condition_five():
    c = np.array([1.0, -2.0])
    sched = DecompositionSchedule(m_f=1.0, c=c, d=np.zeros(2),
                                  rule=lambda k: k * c)
    f = ObjectiveHandle.from_quadratic(consensus_objective(np.zeros(2)))
    pair = decompose_at(f, sched, 3)
    report = verify_assumption3(pair, m_f=1.0, L=1.0)
    assert not report.schedule_convergent
    assert report.alpha_strongly_convex  # only the schedule condition fails


def test_assumption3_generic_pair_sampled():
    f = logcosh_objective(2)
    rng = np.random.default_rng(9)
    pair = decompose_at(f, DecompositionSchedule.random(2, m_f=1.0, rng=rng), 1)
    report = verify_assumption3(pair, m_f=1.0, L=2.0, rng=rng)
    assert report.passed


@pytest.mark.parametrize("handle_factory", [
    lambda: ObjectiveHandle.from_quadratic(consensus_objective(np.array([0.1, 0.2]))),
    lambda: logcosh_objective(4),
])
def test_gradient_matches_finite_differences(handle_factory):
    handle = handle_factory()
    worst = check_gradient(handle, np.random.default_rng(17), points=10, step=1e-5)
    assert worst <= 1e-6


@pytest.mark.parametrize("seed", range(2))
def test_part_monotonicity_and_lipschitz(seed):
    rng = np.random.default_rng(70 + seed)
    f = ObjectiveHandle.from_quadratic(consensus_objective(rng.standard_normal(3)))
    sched = DecompositionSchedule.random(3, m_f=1.0, rng=rng)
    pair = decompose_at(f, sched, seed)
    L = pair.pair_lipschitz
    for part in (pair.alpha, pair.beta):
        for _ in range(30):
            x, y = rng.standard_normal(3), rng.standard_normal(3)
            dg = part.gradient(x) - part.gradient(y)
            dx = x - y
            gap = float(dx @ dx)
            assert float(dg @ dx) >= 1.0 * gap - 1e-9 * (1.0 + gap)
            assert float(np.linalg.norm(dg)) <= L * np.sqrt(gap) + 1e-9


def test_coefficient_drift_vanishes():
    rng = np.random.default_rng(2)
    sched = DecompositionSchedule.random(2, m_f=1.0, rng=rng)
    norm_c = float(np.linalg.norm(sched.c))
    for k in (0, 3, 10, 200):
        drift = np.linalg.norm(sched.coefficient(k + 1) - sched.coefficient(k))
        assert drift == pytest.approx(norm_c * (1.0 / (k + 1) - 1.0 / (k + 2)), rel=1e-12)
    assert np.linalg.norm(sched.coefficient(10**7) - sched.d) < 1e-6


def test_static_schedule_is_constant():
    sched = DecompositionSchedule.static(2, m_f=0.5, d=np.array([1.0, 2.0]))
    assert np.array_equal(sched.coefficient(0), sched.coefficient(999))


def test_schedule_validation():
    with pytest.raises(ValueError):
        DecompositionSchedule(m_f=0.0, c=np.zeros(2), d=np.zeros(2))
    with pytest.raises(ValueError):
        DecompositionSchedule(m_f=1.0, c=np.zeros(2), d=np.zeros(3))


def test_quadratic_validation():
    with pytest.raises(ValueError):
        QuadraticObjective(P=np.array([[1.0, 2.0], [0.0, 1.0]]), q=np.zeros(2))
    with pytest.raises(ValueError):
        QuadraticObjective(P=np.eye(2), q=np.zeros(3))
