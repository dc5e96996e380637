"""Attack models: honest-but-curious agents and channel eavesdroppers.

Both adversaries know the protocol (update-rule forms, the penalty rho,
the initialization rule, the graph) and record traffic on the channels
they can see: an agent taps only its incident channels plus its own
internal values, an eavesdropper taps everything.  Against the baseline
iteration that is enough to recover every neighbor gradient exactly;
against the decomposed iteration the public transcript pins down fewer
equations than unknowns, so gradients stay hidden everywhere except at
the optimum, where the converged multipliers expose them.

Functions taking true objectives (`evaluate_*`, residual reporting) are
audit-side conveniences, not part of the adversary's knowledge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .solver import AgentState, IterationTrace, Message, NotConverged

__all__ = [
    "InsufficientObservation",
    "IncompleteLog",
    "AdversaryView",
    "AuditReport",
    "GradientEstimate",
    "KKTRecovery",
    "PrivacyScan",
    "baseline_leak",
    "evaluate_baseline_leak",
    "counting_audit",
    "kkt_recovery_at_optimum",
    "dual_reconstruction",
    "message_privacy_scan",
]

Observer = int | Literal["eavesdropper"]


class InsufficientObservation(RuntimeError):
    """The observer does not tap a channel or parameter the attack needs."""


class IncompleteLog(RuntimeError):
    """A tapped stream is missing at least one iteration."""


class GradientEstimate(NamedTuple):
    iteration: int
    estimate: np.ndarray


@dataclass(frozen=True)
class AdversaryView:
    """Everything one observer saw during a run."""

    observer: Observer
    messages: tuple[Message, ...]
    own_states: tuple[AgentState, ...] | None
    num_agents: int
    neighbors: dict[int, tuple[int, ...]]
    max_iteration: int

    @staticmethod
    def from_trace(trace: IterationTrace, observer: Observer) -> "AdversaryView":
        """Restrict a trace to what `observer` can see.

        An agent keeps messages it sent or received; the eavesdropper
        keeps everything.  The graph itself is treated as public.
        """
        if not trace.full_history:
            raise ValueError("views need a fully recorded trace (record_trace=True)")
        top = trace.problem.topology
        if observer == "eavesdropper":
            msgs = tuple(trace.messages)
            own = None
        else:
            if not (1 <= observer <= top.num_agents):
                raise ValueError(f"observer {observer} is not an agent id")
            msgs = tuple(m for m in trace.messages
                         if m.sender == observer or m.receiver == observer)
            own = tuple(snap[observer - 1] for snap in trace.snapshots)
        nbrs = {i: top.neighbors(i) for i in range(1, top.num_agents + 1)}
        return AdversaryView(
            observer=observer,
            messages=msgs,
            own_states=own,
            num_agents=top.num_agents,
            neighbors=nbrs,
            max_iteration=trace.iterations,
        )

    def x_stream(self, agent: int) -> list[np.ndarray]:
        """Public states of `agent` for iterations 0..max_iteration.

        Raises InsufficientObservation if no tapped channel carries them,
        IncompleteLog if some iteration is missing from the log.
        """
        by_iter: dict[int, np.ndarray] = {}
        for m in self.messages:
            if m.sender == agent and m.iteration not in by_iter:
                by_iter[m.iteration] = m.payload
        if not by_iter:
            raise InsufficientObservation(
                f"observer {self.observer!r} taps no channel from agent {agent}"
            )
        stream = []
        for s in range(self.max_iteration + 1):
            if s not in by_iter:
                raise IncompleteLog(f"agent {agent} state missing at iteration {s}")
            stream.append(by_iter[s])
        return stream


def _replay_multipliers(xi: Sequence[np.ndarray], xj: Sequence[np.ndarray],
                        rho: float) -> list[np.ndarray]:
    # Same arithmetic as the solver's initialization and ascent, so the
    # replay matches the internal multipliers bit for bit.
    lam = rho * (xi[0] - xj[0])
    out = [lam]
    for s in range(1, len(xi)):
        lam = lam + rho * (xi[s] - xj[s])
        out.append(lam)
    return out


def dual_reconstruction(view: AdversaryView, rho: float) -> dict[tuple[int, int], list[np.ndarray]]:
    """Rebuild every reachable multiplier stream from the public transcript.

    Multipliers are never transmitted, but they are a deterministic
    function of the exchanged public states and the known initialization,
    so telescoping the ascent recovers them exactly.  Returns streams for
    every ordered neighbor pair whose two endpoint streams the observer
    can see.
    """
    streams: dict[int, list[np.ndarray]] = {}
    for agent in range(1, view.num_agents + 1):
        try:
            streams[agent] = view.x_stream(agent)
        except InsufficientObservation:
            continue
    out: dict[tuple[int, int], list[np.ndarray]] = {}
    for i in sorted(streams):
        for j in view.neighbors[i]:
            if j in streams:
                out[(i, j)] = _replay_multipliers(streams[i], streams[j], rho)
    return out


def baseline_leak(
    view: AdversaryView,
    target: int,
    rho: float,
    gamma_target: float | None,
) -> list[GradientEstimate]:
    """Recover the target's gradients from a baseline-mode transcript.

    Solves the published update rule's stationarity condition for the
    gradient at each new iterate:

        grad f_j(x_j^{k+1}) = -gamma_j rho (x_j^{k+1} - x_j^k)
                              - sum_m (lambda_{j,m}^k + rho (x_j^{k+1} - x_m^k)).

    Needs the target's proximal coefficient (public in the threat model;
    pass None to model a private one) and the full state streams of the
    target and all its neighbors.

    Returns estimates of grad f_j at x_j^k for k = 1..K.
    """
    if gamma_target is None:
        raise InsufficientObservation(f"gamma of agent {target} is not known")
    try:
        xj = view.x_stream(target)
        neighbor_streams = {m: view.x_stream(m) for m in view.neighbors[target]}
    except InsufficientObservation as exc:
        raise InsufficientObservation(
            f"observer {view.observer!r} cannot watch all of agent {target}'s "
            f"neighborhood: {exc}"
        ) from exc
    lam = {m: _replay_multipliers(xj, xs, rho) for m, xs in neighbor_streams.items()}
    estimates = []
    for k in range(len(xj) - 1):
        g = -gamma_target * rho * (xj[k + 1] - xj[k])
        for m in view.neighbors[target]:
            g = g - (lam[m][k] + rho * (xj[k + 1] - neighbor_streams[m][k]))
        estimates.append(GradientEstimate(k + 1, g))
    return estimates


def evaluate_baseline_leak(trace: IterationTrace,
                           observer: Observer = "eavesdropper") -> dict[int, float]:
    """Audit-side check: per-agent worst relative error of the leak.

    Compares each recovered gradient with the true objective gradient at
    the same iterate (oracle knowledge, not the adversary's).
    """
    if trace.mode != "baseline":
        raise ValueError("leak evaluation needs a baseline trace")
    view = AdversaryView.from_trace(trace, observer)
    worst: dict[int, float] = {}
    for j in range(1, trace.problem.topology.num_agents + 1):
        estimates = baseline_leak(view, j, trace.rho, trace.gamma_alpha[j - 1])
        err = 0.0
        f = trace.problem.objectives[j - 1]
        for it, est in estimates:
            truth = f.gradient(trace.snapshots[it][j - 1].x_alpha)
            err = max(err, float(np.linalg.norm(est - truth))
                      / max(float(np.linalg.norm(truth)), 1e-30))
        worst[j] = err
    return worst


@dataclass(frozen=True)
class AuditReport:
    """Equation/unknown bookkeeping of the transcript-inference system.

    Watching K iterations of the decomposed protocol yields 2nK update
    equations per target, while the unknowns (both part-gradients per
    iteration, both proximal coefficients, and the private trajectory
    including its start) number at least 3nK + n + 2.
    """

    n: int
    K: int
    observer: Observer
    equations_count: int
    unknowns_lower_bound: int

    @property
    def underdetermined(self) -> bool:
        return self.unknowns_lower_bound > self.equations_count

    @property
    def deficit(self) -> int:
        return self.unknowns_lower_bound - self.equations_count


def counting_audit(n: int, K: int, observer: Observer = "eavesdropper") -> AuditReport:
    """Count equations vs unknowns for a K-iteration observation window.

    The verdict is observer-independent: colluding agents or a full
    eavesdropper see the same public transcript, hence the same system.
    """
    if n < 1 or K < 1:
        raise ValueError("need n >= 1 and K >= 1")
    return AuditReport(
        n=n, K=K, observer=observer,
        equations_count=2 * n * K,
        unknowns_lower_bound=3 * n * K + n + 2,
    )


@dataclass(frozen=True)
class KKTRecovery:
    """Gradient estimate at the optimum from converged multipliers."""

    target: int
    estimate: np.ndarray
    evaluated_at: np.ndarray
    residual: float | None
    internal_dual_norm: float


def kkt_recovery_at_optimum(
    view: AdversaryView,
    target: int,
    trace: IterationTrace,
) -> KKTRecovery:
    """Estimate grad f_j at the limit as minus the sum of converged edge duals.

    Works only once the run has converged; the observer must see the
    target's whole neighborhood to rebuild the multipliers.  The reported
    residual compares the estimate with the true gradient at the observed
    limit (oracle knowledge), including whatever the still-nonzero
    internal dual contributes at finite tolerance.
    """
    if not trace.converged:
        raise NotConverged("KKT recovery needs a converged trace")
    try:
        xj = view.x_stream(target)
        neighbor_streams = {m: view.x_stream(m) for m in view.neighbors[target]}
    except InsufficientObservation as exc:
        raise InsufficientObservation(
            f"observer {view.observer!r} cannot rebuild agent {target}'s duals: {exc}"
        ) from exc
    estimate = np.zeros_like(xj[-1])
    for m in view.neighbors[target]:
        lam = _replay_multipliers(xj, neighbor_streams[m], trace.rho)
        estimate = estimate - lam[-1]
    truth = trace.problem.objectives[target - 1].gradient(xj[-1])
    final_state = trace.snapshots[-1][target - 1]
    internal = (0.0 if final_state.lambda_alphabeta is None
                else float(np.linalg.norm(final_state.lambda_alphabeta)))
    return KKTRecovery(
        target=target,
        estimate=estimate,
        evaluated_at=xj[-1],
        residual=float(np.linalg.norm(estimate - truth)),
        internal_dual_norm=internal,
    )


@dataclass(frozen=True)
class PrivacyScan:
    """Structural verdicts over a full message log."""

    messages_checked: int
    payloads_are_public_states: bool
    private_states_absent: bool
    schedule_coefficients_absent: bool

    @property
    def passed(self) -> bool:
        return (self.payloads_are_public_states and self.private_states_absent
                and self.schedule_coefficients_absent)


def message_privacy_scan(trace: IterationTrace) -> PrivacyScan:
    """Verify that the wire only ever carried public states.

    Every payload must equal the sender's public state at its iteration
    (bit for bit), and no payload may coincide with a private state or a
    split coefficient unless the public state itself does.
    """
    if not trace.full_history:
        raise ValueError("privacy scan needs a fully recorded trace")
    payload_ok = True
    beta_absent = True
    b_absent = True
    for m in trace.messages:
        sender_state = trace.snapshots[m.iteration][m.sender - 1]
        x_pub = sender_state.x_alpha
        if not np.array_equal(m.payload, x_pub):
            payload_ok = False
        if sender_state.x_beta is not None:
            if np.array_equal(m.payload, sender_state.x_beta) and not np.array_equal(x_pub, sender_state.x_beta):
                beta_absent = False
        if trace.mode == "decomposed" and m.iteration >= 1:
            b = trace.b_coefficients[m.iteration - 1][m.sender - 1]
            if np.array_equal(m.payload, b) and not np.array_equal(x_pub, b):
                b_absent = False
    return PrivacyScan(
        messages_checked=len(trace.messages),
        payloads_are_public_states=payload_ok,
        private_states_absent=beta_absent,
        schedule_coefficients_absent=b_absent,
    )
