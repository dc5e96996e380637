"""Convergence certificates and runtime audits of the contraction bounds.

The decomposed iteration is the baseline scheme run on the virtual 2N-node
graph, so both modes are audited with the same machinery.  With the
stacked primal x, per-edge multipliers lambda (one per oriented edge), and
y = (x, lambda), the certified quantities are

    Q = U + D - A.T A,    H = diag(rho Q, (1/rho) I),
    delta = min( (u - 1) A_min / (u Q_max),
                 2 m_f A_min rho / (u L^2 + rho^2 A_min Q_max) ),

where U stacks the proximal coefficients, D the node degrees, A is the
incidence matrix, Q_max the largest eigenvalue of Q, and A_min the
smallest nonzero eigenvalue of A.T A.  Provided Q is PSD, the distance to
the per-iteration optimal pair contracts by 1 / sqrt(1 + delta) per step
up to a perturbation p(k) driven by the drift of the objective split, and
the resulting envelope

    B(k+1) = (B(k) + p(k)) / sqrt(1 + delta),    B(0) = ||y^0 - y^{0*}||_H

dominates the measured distances and tends to zero.

All audits are read-only over traces; inequalities are reported with an
additive slack of 1e-8 * (1 + rhs) to absorb double-precision eigenvalue
and least-squares noise, never enforced by raising.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import Topology, VirtualTopology, degree_matrix, expand_virtual, incidence_matrix
from .newton import damped_newton
from .objectives import ObjectiveHandle, decompose_at

__all__ = [
    "NotPSD",
    "InconsistentKKT",
    "Certificate",
    "InequalityRow",
    "BoundReport",
    "TraceAudit",
    "build_certificate",
    "certificate_for_trace",
    "maximize_delta",
    "centralized_optimum",
    "optimal_multiplier",
    "lemma1_check",
    "lemma2_check",
    "theorem2_bound",
    "audit_trace",
    "export_inequality_csv",
    "certificate_summary",
]

AUDIT_SLACK = 1e-8
KKT_RESIDUAL_TOL = 1e-8


class NotPSD(ValueError):
    """Q = U + D - A.T A has a negative eigenvalue: invalid proximal coefficients."""


class InconsistentKKT(RuntimeError):
    """The multiplier least-squares residual is too large: wrong optimum."""


@dataclass(frozen=True)
class Certificate:
    """Spectral quantities certifying the per-iteration contraction."""

    Q: np.ndarray
    A: np.ndarray
    rho: float
    m_f: float
    L: float
    u: float
    Q_max: float
    A_min: float
    lambda_min_Q: float
    delta: float
    n: int

    @property
    def eta(self) -> float:
        """Certified per-iteration contraction ratio 1 / sqrt(1 + delta)."""
        return 1.0 / float(np.sqrt(1.0 + self.delta))

    @property
    def psd(self) -> bool:
        return self.lambda_min_Q >= -1e-10

    def h_norm(self, x_part: np.ndarray, lam_part: np.ndarray) -> float:
        """Seminorm sqrt(rho x.T Q x + (1/rho) ||lam||^2).

        Values in [-1e-12 * scale, 0) round to zero; anything below that
        signals a genuinely indefinite Q and raises.
        """
        val = self.rho * float(x_part @ (self.Q @ x_part)) + float(lam_part @ lam_part) / self.rho
        if val < 0.0:
            if val < -1e-12 * (1.0 + float(x_part @ x_part) + float(lam_part @ lam_part)):
                raise NotPSD(f"H-seminorm evaluated to {val:.3e} < 0")
            val = 0.0
        return float(np.sqrt(val))

    def q_norm(self, x_part: np.ndarray) -> float:
        val = float(x_part @ (self.Q @ x_part))
        return float(np.sqrt(max(val, 0.0)))


def _delta(u: float, a_min: float, q_max: float, m_f: float, L: float, rho: float) -> float:
    return min(
        (u - 1.0) * a_min / (u * q_max),
        2.0 * m_f * a_min * rho / (u * L * L + rho * rho * a_min * q_max),
    )


def build_certificate(
    graph: Topology | VirtualTopology,
    gammas: Sequence[float],
    n: int,
    rho: float,
    m_f: float,
    L: float,
    u: float = 2.0,
) -> Certificate:
    """Assemble Q and H for a graph and compute the contraction constants.

    `gammas` lists the proximal coefficient of every node of `graph` (for
    a virtual graph: public and private coefficients interleaved in node
    order).  All spectral quantities come from dense symmetric
    eigendecompositions.

    Raises
    ------
    NotPSD
        If the smallest eigenvalue of Q falls below -1e-10.
    """
    if u <= 1.0:
        raise ValueError(f"u must exceed 1, got {u}")
    if len(gammas) != graph.num_nodes:
        raise ValueError(f"need {graph.num_nodes} gammas, got {len(gammas)}")
    a = incidence_matrix(graph, n)
    ata = a.T @ a
    d = degree_matrix(graph, n)
    umat = np.kron(np.diag(np.asarray(gammas, dtype=float)), np.eye(n))
    q = umat + d - ata
    eig_q = np.linalg.eigvalsh(q)
    lambda_min_q = float(eig_q[0])
    q_max = float(eig_q[-1])
    if lambda_min_q < -1e-10:
        raise NotPSD(
            f"Q has eigenvalue {lambda_min_q:.3e} < -1e-10; "
            "choose gammas at least the node degrees"
        )
    eig_a = np.linalg.eigvalsh(ata)
    zero_tol = 1e-9 * max(1.0, float(eig_a[-1]))
    nonzero = eig_a[eig_a > zero_tol]
    if nonzero.size == 0:
        raise ValueError("A.T A has no nonzero eigenvalue (empty edge set?)")
    a_min = float(nonzero[0])
    return Certificate(
        Q=q, A=a, rho=rho, m_f=m_f, L=L, u=u,
        Q_max=q_max, A_min=a_min, lambda_min_Q=lambda_min_q,
        delta=_delta(u, a_min, q_max, m_f, L, rho), n=n,
    )


def maximize_delta(
    graph: Topology | VirtualTopology,
    gammas: Sequence[float],
    n: int,
    rho: float,
    m_f: float,
    L: float,
    u_grid: Sequence[float] | None = None,
) -> Certificate:
    """Scan u over a grid and return the certificate with the largest delta."""
    if u_grid is None:
        u_grid = np.linspace(1.1, 10.0, 90)
    best: Certificate | None = None
    for u in u_grid:
        cert = build_certificate(graph, gammas, n, rho, m_f, L, u=float(u))
        if best is None or cert.delta > best.delta:
            best = cert
    return best


def centralized_optimum(objectives: Sequence[ObjectiveHandle]) -> np.ndarray:
    """High-accuracy solution of min_x sum_i f_i(x) (the consensus optimum).

    Quadratic instances solve the stationarity system directly; generic
    ones run damped Newton to gradient norm 1e-12.
    """
    n = objectives[0].dimension
    if all(f.quadratic is not None for f in objectives):
        p_total = np.zeros((n, n))
        q_total = np.zeros(n)
        for f in objectives:
            p_total += f.quadratic.P
            q_total += f.quadratic.q
        return np.linalg.solve(p_total, -q_total)

    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(n)
        for f in objectives:
            g = g + f.gradient(x)
        return g

    return damped_newton(grad, np.zeros(n), tol=1e-12, max_iters=200)


def optimal_multiplier(
    node_objectives: Sequence[ObjectiveHandle],
    x_star: np.ndarray,
    a: np.ndarray,
    _pinv_at: np.ndarray | None = None,
) -> np.ndarray:
    """Minimum-norm multiplier with A.T lambda = -grad h(x*).

    The multiplier of the stationarity system is not unique on graphs with
    cycles; the contraction proofs take the one in the column space of A,
    which is exactly the minimum-norm least-squares solution.

    Raises
    ------
    InconsistentKKT
        If the least-squares residual exceeds 1e-8 (wrong x_star).
    """
    g = _stack_gradients(node_objectives, x_star)
    pinv_at = np.linalg.pinv(a.T) if _pinv_at is None else _pinv_at
    lam = pinv_at @ (-g)
    residual = float(np.linalg.norm(a.T @ lam + g))
    if residual > KKT_RESIDUAL_TOL:
        raise InconsistentKKT(
            f"A.T lambda + grad residual {residual:.3e} > {KKT_RESIDUAL_TOL:.1e}"
        )
    return lam


def _stack_gradients(node_objectives: Sequence[ObjectiveHandle], x_star: np.ndarray) -> np.ndarray:
    n = node_objectives[0].dimension
    blocks = [h.gradient(x_star[i * n:(i + 1) * n]) for i, h in enumerate(node_objectives)]
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# Trace plumbing: stacking states and multipliers in virtual node/edge order.


def _trace_graph(trace) -> Topology | VirtualTopology:
    top = trace.problem.topology
    return expand_virtual(top) if trace.mode == "decomposed" else top


def _stack_x(trace, states) -> np.ndarray:
    if trace.mode == "decomposed":
        parts = []
        for s in states:
            parts.append(s.x_alpha)
            parts.append(s.x_beta)
        return np.concatenate(parts)
    return np.concatenate([s.x_alpha for s in states])


def _stack_lambda(trace, states) -> np.ndarray:
    """Per-edge multipliers in canonical (origin holds the multiplier) order."""
    top = trace.problem.topology
    parts = [states[i - 1].lambda_alpha[j] for i, j in top.edges]
    if trace.mode == "decomposed":
        parts += [s.lambda_alphabeta for s in states]
    return np.concatenate(parts)


def _node_objectives(trace, k: int) -> list[ObjectiveHandle]:
    """h_1^k .. h_{2N}^k in virtual node order (public, private per agent).

    Baseline traces return the static objectives.  Decomposed traces
    rebuild the split at index k from the deterministic schedules.
    """
    problem = trace.problem
    if trace.mode == "baseline":
        return list(problem.objectives)
    handles: list[ObjectiveHandle] = []
    for f, sched in zip(problem.objectives, problem.schedules):
        pair = decompose_at(f, sched, k)
        handles.append(pair.alpha)
        handles.append(pair.beta)
    return handles


def _trace_gammas(trace) -> list[float]:
    if trace.mode == "decomposed":
        return [g for ab in zip(trace.gamma_alpha, trace.gamma_beta) for g in ab]
    return list(trace.gamma_alpha)


def certificate_for_trace(trace, u: float = 2.0, maximize_u: bool = False) -> Certificate:
    """Certificate matching a run's graph, coefficients, and moduli.

    m_f is the common split modulus for decomposed traces (the smallest
    local modulus for baseline ones) and L the largest part-wise Lipschitz
    constant.
    """
    graph = _trace_graph(trace)
    gammas = _trace_gammas(trace)
    n = trace.dimension
    if trace.mode == "decomposed":
        m_fs = {s.m_f for s in trace.problem.schedules}
        if len(m_fs) != 1:
            raise ValueError("all schedules must share one m_f")
        m_f = m_fs.pop()
        L = max(max(m_f, f.lipschitz - m_f) for f in trace.problem.objectives)
    else:
        m_f = min(f.modulus for f in trace.problem.objectives)
        L = max(f.lipschitz for f in trace.problem.objectives)
    if maximize_u:
        return maximize_delta(graph, gammas, n, trace.rho, m_f, L)
    return build_certificate(graph, gammas, n, trace.rho, m_f, L, u=u)


# ---------------------------------------------------------------------------
# Inequality audits.


@dataclass(frozen=True)
class InequalityRow:
    iteration: int
    lhs: float
    rhs: float
    passed: bool


@dataclass(frozen=True)
class BoundReport:
    """Measured H-distances against the certified envelope B(k)."""

    h_distance: list[float]
    p: list[float]
    bound: list[float]
    dominated: bool
    tends_to_zero: bool
    eta: float


@dataclass(frozen=True)
class TraceAudit:
    certificate: Certificate
    lemma1: list[InequalityRow]
    lemma2: list[InequalityRow]
    bound: BoundReport

    @property
    def all_passed(self) -> bool:
        return (all(r.passed for r in self.lemma1)
                and all(r.passed for r in self.lemma2)
                and self.bound.dominated and self.bound.tends_to_zero)


class _AuditData:
    """Shared per-iteration quantities for the three audits."""

    def __init__(self, trace, cert: Certificate):
        if not trace.full_history:
            raise ValueError("audits need a fully recorded trace (record_trace=True)")
        self.trace = trace
        self.cert = cert
        self.T = len(trace.snapshots) - 1
        x_opt = centralized_optimum(trace.problem.objectives)
        num_nodes = _trace_graph(trace).num_nodes
        self.x_star = np.tile(x_opt, num_nodes)
        self.pinv_at = np.linalg.pinv(cert.A.T)
        self.x = [_stack_x(trace, s) for s in trace.snapshots]
        self.lam = [_stack_lambda(trace, s) for s in trace.snapshots]
        if trace.mode == "baseline":
            handles = _node_objectives(trace, 0)
            g0 = _stack_gradients(handles, self.x_star)
            self.g = [g0] * (self.T + 1)
        else:
            self.g = [
                _stack_gradients(_node_objectives(trace, k), self.x_star)
                for k in range(self.T + 1)
            ]
        if trace.mode == "baseline":
            lam0 = self._multiplier(0)
            self.lam_star = [lam0] * (self.T + 1)
        else:
            self.lam_star = [self._multiplier(k) for k in range(self.T + 1)]

    def _multiplier(self, k: int) -> np.ndarray:
        lam = self.pinv_at @ (-self.g[k])
        residual = float(np.linalg.norm(self.cert.A.T @ lam + self.g[k]))
        if residual > KKT_RESIDUAL_TOL:
            raise InconsistentKKT(f"multiplier residual {residual:.3e} at iteration {k}")
        return lam

    def distance(self, k: int, star_index: int) -> float:
        """||y^k - y^{star_index *}||_H."""
        return self.cert.h_norm(self.x[k] - self.x_star,
                                self.lam[k] - self.lam_star[star_index])

    def p_value(self, k: int) -> float:
        dg = self.g[k + 1] - self.g[k]
        return float(np.linalg.norm(dg)) / float(np.sqrt(self.cert.rho * self.cert.A_min))


def _slack(rhs: float) -> float:
    return AUDIT_SLACK * (1.0 + rhs)


def lemma1_check(trace, cert: Certificate, _data: _AuditData | None = None) -> list[InequalityRow]:
    """Per-step contraction toward the iteration-(k+1) optimal pair:
    ||y^{k+1} - y^{k+1*}||_H <= ||y^k - y^{k+1*}||_H / sqrt(1 + delta)."""
    data = _data if _data is not None else _AuditData(trace, cert)
    eta = cert.eta
    rows = []
    for k in range(data.T):
        lhs = data.distance(k + 1, k + 1)
        rhs = data.distance(k, k + 1) * eta
        rows.append(InequalityRow(k, lhs, rhs, lhs <= rhs + _slack(rhs)))
    return rows


def lemma2_check(trace, cert: Certificate, _data: _AuditData | None = None) -> list[InequalityRow]:
    """Perturbation bound for the moving target:
    ||y^k - y^{k+1*}||_H <= ||y^k - y^{k*}||_H + p(k)."""
    data = _data if _data is not None else _AuditData(trace, cert)
    rows = []
    for k in range(data.T):
        lhs = data.distance(k, k + 1)
        rhs = data.distance(k, k) + data.p_value(k)
        rows.append(InequalityRow(k, lhs, rhs, lhs <= rhs + _slack(rhs)))
    return rows


def theorem2_bound(trace, cert: Certificate, _data: _AuditData | None = None) -> BoundReport:
    """Build the envelope B(k) and verify it dominates the measured distances.

    B(0) = ||y^0 - y^{0*}||_H and B(k+1) = eta (B(k) + p(k)).  The envelope
    provably vanishes whenever eta < 1 and p(k) -> 0; "tends to zero"
    checks those premises numerically: eta below one and the last tenth of
    the p sequence at most 1e-3 * (1 + max p).  The measured envelope
    values are reported so callers can also assert a concrete decrease on
    runs long enough for the geometric term to die.
    """
    data = _data if _data is not None else _AuditData(trace, cert)
    eta = cert.eta
    d = [data.distance(k, k) for k in range(data.T + 1)]
    p = [data.p_value(k) for k in range(data.T)]
    bound = [d[0]]
    for k in range(data.T):
        bound.append(eta * (bound[-1] + p[k]))
    dominated = all(d[k] <= bound[k] + _slack(bound[k]) for k in range(data.T + 1))
    if p:
        tail = p[-max(1, len(p) // 10):]
        perturbation_vanishes = max(tail) <= 1e-3 * (1.0 + max(p))
    else:
        perturbation_vanishes = True
    tends_to_zero = eta < 1.0 and perturbation_vanishes
    return BoundReport(h_distance=d, p=p, bound=bound,
                       dominated=dominated, tends_to_zero=tends_to_zero, eta=eta)


def audit_trace(trace, cert: Certificate | None = None, u: float = 2.0) -> TraceAudit:
    """Run all three audits over one trace, sharing the per-iteration data."""
    if cert is None:
        cert = certificate_for_trace(trace, u=u)
    data = _AuditData(trace, cert)
    return TraceAudit(
        certificate=cert,
        lemma1=lemma1_check(trace, cert, _data=data),
        lemma2=lemma2_check(trace, cert, _data=data),
        bound=theorem2_bound(trace, cert, _data=data),
    )


def export_inequality_csv(rows: Sequence[InequalityRow], path) -> None:
    lines = ["iteration,lhs,rhs,pass"]
    for r in rows:
        lines.append(f"{r.iteration},{repr(r.lhs)},{repr(r.rhs)},{int(r.passed)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def certificate_summary(cert: Certificate) -> str:
    return "\n".join([
        f"PSD verdict : {'pass' if cert.psd else 'FAIL'} (lambda_min(Q) = {cert.lambda_min_Q:.3e})",
        f"Q_max       : {cert.Q_max:.6f}",
        f"A_min       : {cert.A_min:.6f}",
        f"delta       : {cert.delta:.6f} (u = {cert.u:g})",
        f"eta         : {cert.eta:.6f}",
        f"rho         : {cert.rho:g}, m_f = {cert.m_f:g}, L = {cert.L:g}",
    ])
