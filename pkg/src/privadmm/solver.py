"""The iteration engine: proximal Jacobian ADMM and its decomposed variant.

Baseline mode solves

    min sum_i f_i(x_i)   s.t.  x_i = x_j on every edge,

with the parallel (Jacobian) update: every agent minimizes its local
augmented Lagrangian term plus a proximal anchor (gamma_i * rho / 2)
||x - x_i^k||^2, reading only iteration-k neighbor values, then all
multipliers ascend by rho times the fresh constraint violations.

Decomposed mode runs the same scheme on the virtual two-node-per-agent
problem: at every round each agent re-splits f_i into a public part
(talks to neighbors) and a private part (talks only to its sibling node),
updates both blocks in parallel, and transmits only the public state.
Messages therefore never carry the private state or the split
coefficients; that property is a structural fact of this module and is
audited by the adversary module.

Dual variables are initialized as rho-scaled initial disagreements,
lambda_{i,j}^0 = rho (x_i^0 - x_j^0), which makes the two multipliers of
every constraint exact negatives of each other at all iterations (the
update arithmetic is sign-symmetric in IEEE floats).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .graph import Topology, expand_virtual, laplacian
from .newton import InnerSolveFailure, damped_newton
from .objectives import DecomposedPair, DecompositionSchedule, ObjectiveHandle, decompose_at

__all__ = [
    "DimensionMismatch",
    "NotConverged",
    "InnerSolveFailure",
    "AgentState",
    "SolverConfig",
    "ConsensusProblem",
    "Message",
    "IterationTrace",
    "init_states",
    "baseline_step",
    "decomposed_step",
    "run",
    "default_gamma_alpha",
    "default_gamma_beta",
    "export_state_csv",
    "export_message_csv",
]

Mode = Literal["baseline", "decomposed"]


class DimensionMismatch(ValueError):
    """Initial states or targets with inconsistent dimensions."""


class NotConverged(RuntimeError):
    """An operation required a converged trace but got an unconverged one."""


class Message(NamedTuple):
    """One transmitted public state: (sender, receiver, iteration, payload)."""

    sender: int
    receiver: int
    iteration: int
    payload: np.ndarray


@dataclass
class AgentState:
    """One agent's primal pair and duals at a fixed iteration.

    Baseline mode uses only `x_alpha` (the single primal copy) and
    `lambda_alpha`; the beta fields stay None.  `lambda_alpha` maps each
    neighbor j to lambda_{i,j}; the reverse multiplier lives in agent j's
    state and is its exact negative.
    """

    x_alpha: np.ndarray
    lambda_alpha: dict[int, np.ndarray]
    x_beta: np.ndarray | None = None
    lambda_alphabeta: np.ndarray | None = None
    lambda_betaalpha: np.ndarray | None = None

    def copy(self) -> "AgentState":
        return AgentState(
            x_alpha=self.x_alpha.copy(),
            lambda_alpha={j: v.copy() for j, v in self.lambda_alpha.items()},
            x_beta=None if self.x_beta is None else self.x_beta.copy(),
            lambda_alphabeta=None if self.lambda_alphabeta is None else self.lambda_alphabeta.copy(),
            lambda_betaalpha=None if self.lambda_betaalpha is None else self.lambda_betaalpha.copy(),
        )


@dataclass(frozen=True)
class SolverConfig:
    """Penalty, proximal coefficients, stopping rule, and inner-solver policy.

    gamma_alpha / gamma_beta default to the degree-based choice that makes
    the contraction matrix Q = U + D - A.T A diagonally dominant (hence
    PSD): the node degree of the graph being solved, i.e. base degree for
    baseline mode and base degree + 1 (public) / 1 (private) for
    decomposed mode.  `inner_solver='auto'` uses the closed form whenever
    the subproblem is quadratic and damped Newton otherwise.
    """

    rho: float = 1.0
    gamma_alpha: tuple[float, ...] | None = None
    gamma_beta: tuple[float, ...] | None = None
    max_iters: int = 5000
    primal_tolerance: float = 1e-8
    inner_solver: Literal["auto", "closed_form", "newton"] = "auto"
    inner_tolerance: float = 1e-10
    inner_max_iters: int = 100
    verify_psd: bool = True
    seed: int | None = None

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.primal_tolerance <= 0:
            raise ValueError("primal_tolerance must be positive")
        for name in ("gamma_alpha", "gamma_beta"):
            g = getattr(self, name)
            if g is not None:
                g = tuple(float(v) for v in g)
                if any(v <= 0 for v in g):
                    raise ValueError(f"{name} entries must be positive")
                object.__setattr__(self, name, g)


@dataclass(frozen=True)
class ConsensusProblem:
    """A solvable instance: graph, local objectives, splits, and starts."""

    topology: Topology
    objectives: tuple[ObjectiveHandle, ...]
    x0_alpha: tuple[np.ndarray, ...]
    x0_beta: tuple[np.ndarray, ...] | None = None
    schedules: tuple[DecompositionSchedule, ...] | None = None

    @property
    def dimension(self) -> int:
        return self.objectives[0].dimension


@dataclass
class IterationTrace:
    """Everything one run produced, iteration by iteration.

    snapshots[s] is the full list of agent states after s steps
    (snapshots[0] is the initialization).  messages holds the initial
    exchange (iteration 0) and every later transmission; payloads are the
    senders' public states only.  b_coefficients[s - 1] stacks the split
    coefficients used to produce snapshot s (decomposed mode).

    When recorded with record_trace=False, only the first and last
    snapshots are kept and messages are skipped; residuals are always
    complete.
    """

    mode: Mode
    problem: ConsensusProblem
    rho: float
    gamma_alpha: tuple[float, ...]
    gamma_beta: tuple[float, ...] | None
    snapshots: list[list[AgentState]]
    messages: list[Message]
    residuals: list[float]
    b_coefficients: list[np.ndarray]
    converged: bool
    iterations: int
    full_history: bool = True

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    @property
    def final_states(self) -> list[AgentState]:
        return self.snapshots[-1]


def default_gamma_alpha(topology: Topology, mode: Mode) -> tuple[float, ...]:
    """Degree-based proximal coefficients for the public blocks."""
    if mode == "baseline":
        return tuple(float(max(topology.degree(i), 1)) for i in range(1, topology.num_agents + 1))
    return tuple(float(topology.degree(i) + 1) for i in range(1, topology.num_agents + 1))


def default_gamma_beta(topology: Topology) -> tuple[float, ...]:
    """Private blocks have virtual degree 1."""
    return tuple(1.0 for _ in range(topology.num_agents))


def init_states(
    topology: Topology,
    x0_alpha: Sequence[np.ndarray],
    x0_beta: Sequence[np.ndarray] | None,
    rho: float,
) -> list[AgentState]:
    """Set initial primal values and the rho-scaled initial multipliers.

    lambda_{i,j}^0 = rho (x_i^0 - x_j^0) for every neighbor pair, and for
    decomposed mode lambda^{ab,0} = rho (x^a0 - x^b0) with its reverse
    computed independently (exact antisymmetry by construction).
    """
    n_agents = topology.num_agents
    if len(x0_alpha) != n_agents:
        raise DimensionMismatch(f"need {n_agents} initial states, got {len(x0_alpha)}")
    xa = [np.asarray(v, dtype=float) for v in x0_alpha]
    n = xa[0].size
    if any(v.shape != (n,) for v in xa):
        raise DimensionMismatch("initial states must share one dimension")
    xb = None
    if x0_beta is not None:
        if len(x0_beta) != n_agents:
            raise DimensionMismatch(f"need {n_agents} private initial states, got {len(x0_beta)}")
        xb = [np.asarray(v, dtype=float) for v in x0_beta]
        if any(v.shape != (n,) for v in xb):
            raise DimensionMismatch("private initial states must share the same dimension")
    states = []
    for i in range(1, n_agents + 1):
        lam = {j: rho * (xa[i - 1] - xa[j - 1]) for j in topology.neighbors(i)}
        if xb is None:
            states.append(AgentState(x_alpha=xa[i - 1].copy(), lambda_alpha=lam))
        else:
            states.append(AgentState(
                x_alpha=xa[i - 1].copy(),
                lambda_alpha=lam,
                x_beta=xb[i - 1].copy(),
                lambda_alphabeta=rho * (xa[i - 1] - xb[i - 1]),
                lambda_betaalpha=rho * (xb[i - 1] - xa[i - 1]),
            ))
    return states


def _resolve_order(n_agents: int, agent_order: Sequence[int] | None) -> Sequence[int]:
    if agent_order is None:
        return range(1, n_agents + 1)
    if sorted(agent_order) != list(range(1, n_agents + 1)):
        raise ValueError("agent_order must be a permutation of 1..N")
    return agent_order


def _minimize_subproblem(
    objective: ObjectiveHandle,
    shift: float,
    lin: np.ndarray,
    x_start: np.ndarray,
    config: SolverConfig,
) -> np.ndarray:
    """argmin of objective(x) + (shift/2)||x||^2 - lin.T x (plus constants).

    `shift` collects every quadratic penalty/proximal coefficient and `lin`
    their linear parts, so the stationarity condition is
    grad(x) + shift * x - lin = 0.
    """
    quad = objective.quadratic
    policy = config.inner_solver
    if policy == "closed_form" and quad is None:
        raise InnerSolveFailure("closed_form requested for a non-quadratic objective")
    if quad is not None and policy != "newton":
        rhs = lin - quad.q
        if quad.iso is not None:
            return rhs / (quad.iso + shift)
        return np.linalg.solve(quad.P + shift * np.eye(quad.dimension), rhs)

    def grad(v: np.ndarray) -> np.ndarray:
        return objective.gradient(v) + shift * v - lin

    hess = None
    if quad is not None:
        eye = np.eye(quad.dimension)
        hess = lambda v: quad.P + shift * eye  # noqa: E731
    return damped_newton(grad, x_start, tol=config.inner_tolerance,
                         max_iters=config.inner_max_iters, hess=hess)


def baseline_step(
    states: Sequence[AgentState],
    objectives: Sequence[ObjectiveHandle],
    config: SolverConfig,
    topology: Topology,
    agent_order: Sequence[int] | None = None,
) -> list[AgentState]:
    """One parallel round of the baseline iteration.

    All primal updates read only the incoming iteration-k states, so any
    agent_order permutation returns bitwise-identical results.  Input
    states are never mutated.
    """
    n_agents = topology.num_agents
    rho = config.rho
    gamma = config.gamma_alpha or default_gamma_alpha(topology, "baseline")
    order = _resolve_order(n_agents, agent_order)
    new_x: list[np.ndarray | None] = [None] * n_agents
    for i in order:
        a = i - 1
        s = states[a]
        g = gamma[a]
        deg = topology.degree(i)
        shift = (g + deg) * rho
        lin = g * rho * s.x_alpha
        for j in topology.neighbors(i):
            lin = lin - (s.lambda_alpha[j] - rho * states[j - 1].x_alpha)
        new_x[a] = _minimize_subproblem(objectives[a], shift, lin, s.x_alpha, config)
    new_states = []
    for i in range(1, n_agents + 1):
        a = i - 1
        lam = {j: states[a].lambda_alpha[j] + rho * (new_x[a] - new_x[j - 1])
               for j in topology.neighbors(i)}
        new_states.append(AgentState(x_alpha=new_x[a], lambda_alpha=lam))
    return new_states


def decomposed_step(
    states: Sequence[AgentState],
    schedules: Sequence[DecompositionSchedule],
    objectives: Sequence[ObjectiveHandle],
    config: SolverConfig,
    topology: Topology,
    k: int,
    agent_order: Sequence[int] | None = None,
) -> tuple[list[AgentState], list[DecomposedPair]]:
    """One parallel round of the decomposed iteration (k -> k+1).

    Each agent first re-splits its objective at index k + 1, then updates
    its public and private blocks from the k-snapshot, and finally all
    multipliers ascend.  Returns the new states and the pairs used.
    """
    n_agents = topology.num_agents
    rho = config.rho
    gamma_a = config.gamma_alpha or default_gamma_alpha(topology, "decomposed")
    gamma_b = config.gamma_beta or default_gamma_beta(topology)
    order = _resolve_order(n_agents, agent_order)
    pairs: list[DecomposedPair | None] = [None] * n_agents
    new_xa: list[np.ndarray | None] = [None] * n_agents
    new_xb: list[np.ndarray | None] = [None] * n_agents
    for i in order:
        a = i - 1
        s = states[a]
        pair = decompose_at(objectives[a], schedules[a], k + 1)
        pairs[a] = pair
        deg = topology.degree(i)
        ga, gb = gamma_a[a], gamma_b[a]
        shift_a = (ga + deg + 1.0) * rho
        lin_a = ga * rho * s.x_alpha - s.lambda_alphabeta + rho * s.x_beta
        for j in topology.neighbors(i):
            lin_a = lin_a - (s.lambda_alpha[j] - rho * states[j - 1].x_alpha)
        new_xa[a] = _minimize_subproblem(pair.alpha, shift_a, lin_a, s.x_alpha, config)
        shift_b = (gb + 1.0) * rho
        lin_b = gb * rho * s.x_beta - s.lambda_betaalpha + rho * s.x_alpha
        new_xb[a] = _minimize_subproblem(pair.beta, shift_b, lin_b, s.x_beta, config)
    new_states = []
    for i in range(1, n_agents + 1):
        a = i - 1
        lam = {j: states[a].lambda_alpha[j] + rho * (new_xa[a] - new_xa[j - 1])
               for j in topology.neighbors(i)}
        new_states.append(AgentState(
            x_alpha=new_xa[a],
            lambda_alpha=lam,
            x_beta=new_xb[a],
            lambda_alphabeta=states[a].lambda_alphabeta + rho * (new_xa[a] - new_xb[a]),
            lambda_betaalpha=states[a].lambda_betaalpha + rho * (new_xb[a] - new_xa[a]),
        ))
    return new_states, pairs


def _residual(states: Sequence[AgentState], topology: Topology, decomposed: bool) -> float:
    r = 0.0
    for i, j in topology.edges:
        d = np.abs(states[i - 1].x_alpha - states[j - 1].x_alpha).max()
        if d > r:
            r = float(d)
    if decomposed:
        for s in states:
            d = np.abs(s.x_alpha - s.x_beta).max()
            if d > r:
                r = float(d)
    return r


def _psd_precheck(topology: Topology, config: SolverConfig, mode: Mode) -> None:
    """Cheap eigenvalue check of Q = U + D - A.T A on the scalar graph.

    The Kronecker lift with the identity preserves eigenvalues, so the
    n = 1 matrix decides.  Raises the analysis module's NotPSD on failure
    unless config.verify_psd is False, which downgrades to a warning.
    """
    from .analysis import NotPSD

    if mode == "baseline":
        graph = topology
        gammas = list(config.gamma_alpha or default_gamma_alpha(topology, "baseline"))
    else:
        graph = expand_virtual(topology)
        ga = config.gamma_alpha or default_gamma_alpha(topology, "decomposed")
        gb = config.gamma_beta or default_gamma_beta(topology)
        gammas = [g for pair in zip(ga, gb) for g in pair]
    lap = laplacian(graph)
    degs = np.diag(lap).copy()
    q = np.diag(np.asarray(gammas, dtype=float)) + np.diag(degs) - lap
    lam_min = float(np.linalg.eigvalsh(q)[0])
    if lam_min < -1e-10:
        if config.verify_psd:
            raise NotPSD(
                f"U + D - A.T A has eigenvalue {lam_min:.3e} < 0; "
                "increase the proximal coefficients (gamma >= degree suffices)"
            )
        warnings.warn(
            f"PSD condition waived: U + D - A.T A has eigenvalue {lam_min:.3e} < 0; "
            "the contraction certificate will not hold",
            stacklevel=3,
        )


def run(
    mode: Mode,
    problem: ConsensusProblem,
    config: SolverConfig,
    record_trace: bool = True,
) -> IterationTrace:
    """Iterate until the constraint violations fall below tolerance.

    The stopping rule is the infinity norm over all consensus constraints
    (and, in decomposed mode, the public/private gaps).  Hitting max_iters
    returns the trace with converged=False rather than raising.
    """
    if mode not in ("baseline", "decomposed"):
        raise ValueError(f"unknown mode {mode!r}")
    topology = problem.topology
    n_agents = topology.num_agents
    if len(problem.objectives) != n_agents:
        raise DimensionMismatch("one objective per agent required")
    decomposed = mode == "decomposed"
    if decomposed:
        if problem.schedules is None or problem.x0_beta is None:
            raise ValueError("decomposed mode needs schedules and private initial states")
        if len(problem.schedules) != n_agents:
            raise DimensionMismatch("one schedule per agent required")
    _psd_precheck(topology, config, mode)
    gamma_alpha = config.gamma_alpha or default_gamma_alpha(topology, mode)
    gamma_beta = (config.gamma_beta or default_gamma_beta(topology)) if decomposed else None
    resolved = replace(config, gamma_alpha=gamma_alpha, gamma_beta=gamma_beta)

    states = init_states(topology, problem.x0_alpha,
                         problem.x0_beta if decomposed else None, config.rho)
    snapshots = [states]
    messages: list[Message] = []
    residuals: list[float] = []
    b_history: list[np.ndarray] = []

    def record_messages(current: Sequence[AgentState], iteration: int) -> None:
        for i, j in topology.edges:
            messages.append(Message(i, j, iteration, current[i - 1].x_alpha))
            messages.append(Message(j, i, iteration, current[j - 1].x_alpha))

    if record_trace:
        record_messages(states, 0)

    converged = False
    iterations = 0
    for s in range(1, config.max_iters + 1):
        if decomposed:
            states, pairs = decomposed_step(states, problem.schedules, problem.objectives,
                                            resolved, topology, s - 1)
            b_history.append(np.stack([p.b for p in pairs]))
        else:
            states = baseline_step(states, problem.objectives, resolved, topology)
        if record_trace:
            record_messages(states, s)
            snapshots.append(states)
        r = _residual(states, topology, decomposed)
        residuals.append(r)
        iterations = s
        if r <= config.primal_tolerance:
            converged = True
            break
    if not record_trace and iterations > 0:
        snapshots.append(states)
    return IterationTrace(
        mode=mode,
        problem=problem,
        rho=config.rho,
        gamma_alpha=tuple(gamma_alpha),
        gamma_beta=None if gamma_beta is None else tuple(gamma_beta),
        snapshots=snapshots,
        messages=messages,
        residuals=residuals,
        b_coefficients=b_history,
        converged=converged,
        iterations=iterations,
        full_history=record_trace,
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def _role_residual(states: Sequence[AgentState], topology: Topology,
                   agent: int, role: str) -> float:
    s = states[agent - 1]
    if role == "beta":
        return float(np.abs(s.x_beta - s.x_alpha).max())
    r = 0.0
    for j in topology.neighbors(agent):
        r = max(r, float(np.abs(s.x_alpha - states[j - 1].x_alpha).max()))
    if s.x_beta is not None:
        r = max(r, float(np.abs(s.x_alpha - s.x_beta).max()))
    return r


def export_state_csv(trace: IterationTrace, path) -> None:
    """One row per (iteration, agent, role) with the state vector and its
    incident-constraint residual.  Floats use shortest round-trip repr, so
    identical runs produce identical bytes."""
    n = trace.dimension
    header = ["iter", "agent", "role"] + [f"x{c}" for c in range(n)] + ["residual"]
    lines = [",".join(header)]
    topology = trace.problem.topology
    for s, states in enumerate(trace.snapshots):
        for agent in range(1, topology.num_agents + 1):
            st = states[agent - 1]
            roles = ("alpha",) if st.x_beta is None else ("alpha", "beta")
            for role in roles:
                vec = st.x_alpha if role == "alpha" else st.x_beta
                row = [str(s), str(agent), role]
                row += [_fmt(v) for v in vec]
                row.append(_fmt(_role_residual(states, topology, agent, role)))
                lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def export_message_csv(trace: IterationTrace, path) -> None:
    """One row per transmitted message: iter, sender, receiver, payload."""
    n = trace.dimension
    header = ["iter", "sender", "receiver"] + [f"x{c}" for c in range(n)]
    lines = [",".join(header)]
    for m in trace.messages:
        row = [str(m.iteration), str(m.sender), str(m.receiver)]
        row += [_fmt(v) for v in m.payload]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
