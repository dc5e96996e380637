"""Decentralized consensus optimization over peer networks.

Implements proximal Jacobian ADMM, its privacy-preserving
function-decomposition variant, runtime convergence certificates, and
adversarial privacy audits, plus a config-driven experiment harness.
"""

from .graph import (
    DisconnectedGraph,
    GraphError,
    InvalidEdge,
    Topology,
    VirtualTopology,
    build_topology,
    degree_matrix,
    expand_virtual,
    incidence_matrix,
)
from .objectives import (
    DecomposedPair,
    DecompositionSchedule,
    ModulusViolation,
    ObjectiveHandle,
    QuadraticObjective,
    consensus_objective,
    decompose_at,
    verify_assumption3,
)
from .solver import (
    AgentState,
    ConsensusProblem,
    DimensionMismatch,
    InnerSolveFailure,
    IterationTrace,
    Message,
    NotConverged,
    SolverConfig,
    baseline_step,
    decomposed_step,
    init_states,
    run,
)
from .analysis import (
    Certificate,
    InconsistentKKT,
    NotPSD,
    audit_trace,
    build_certificate,
    centralized_optimum,
    certificate_for_trace,
    lemma1_check,
    lemma2_check,
    optimal_multiplier,
    theorem2_bound,
)
from .adversary import (
    AdversaryView,
    AuditReport,
    IncompleteLog,
    InsufficientObservation,
    baseline_leak,
    counting_audit,
    dual_reconstruction,
    kkt_recovery_at_optimum,
    message_privacy_scan,
)
from .experiments import (
    ComparisonReport,
    ConfigError,
    ExperimentConfig,
    MetricD,
    analytic_optimum,
    compare_modes,
    load_config,
    run_experiment,
)

__version__ = "0.1.0"
