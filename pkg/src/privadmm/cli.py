"""Command-line front end: run experiments, audit runs, compare modes.

Exit codes map to machine-readable error categories, printed to stderr as
one JSON line {"error": {"category": ..., "message": ...}}:

    2 config-error, 3 graph-error, 4 solver-error, 5 analysis-error,
    6 audit-error, 7 io-error, 1 internal-error.

The audit subcommand re-simulates the configured instance from its seed
(runs are deterministic, so this reproduces any previously exported
trace byte for byte) and then audits the in-memory trace.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, adversary, experiments, graph, newton, solver

_CATEGORIES = [
    (experiments.ConfigError, "config-error", 2),
    (graph.GraphError, "graph-error", 3),
    (newton.InnerSolveFailure, "solver-error", 4),
    (solver.DimensionMismatch, "solver-error", 4),
    (solver.NotConverged, "solver-error", 4),
    (analysis.NotPSD, "analysis-error", 5),
    (analysis.InconsistentKKT, "analysis-error", 5),
    (adversary.InsufficientObservation, "audit-error", 6),
    (adversary.IncompleteLog, "audit-error", 6),
    (OSError, "io-error", 7),
]


def _classify(exc: Exception) -> tuple[str, int]:
    for etype, category, code in _CATEGORIES:
        if isinstance(exc, etype):
            return category, code
    return "internal-error", 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment YAML file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--runs", type=int, default=None, help="override the number of runs M")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None, help="primal tolerance override")


def _load(args) -> experiments.ExperimentConfig:
    config = experiments.load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.runs is not None:
        if args.runs < 1:
            raise experiments.ConfigError("--runs must be >= 1")
        config = replace(config, runs=args.runs)
    solver_cfg = config.solver
    if args.max_iters is not None:
        solver_cfg = replace(solver_cfg, max_iters=args.max_iters)
    if args.tol is not None:
        solver_cfg = replace(solver_cfg, primal_tolerance=args.tol)
    if getattr(args, "mode", None) is not None:
        config = replace(config, mode=args.mode)
    return replace(config, solver=solver_cfg)


def _cmd_run(args) -> int:
    config = _load(args)
    result = experiments.run_experiment(config, out_dir=args.out)
    opt = " ".join(f"{v:.6g}" for v in result.optimum)
    print(f"instance optimum: [{opt}]")
    for mode, res in result.results.items():
        print(f"{mode}: runs={res.metric.runs} d={res.metric.value:.6e} "
              f"converged={sum(res.converged)}/{len(res.converged)} "
              f"max_iters_used={max(res.iterations)}")
    if result.output_dir is not None:
        print(f"artifacts written to {result.output_dir}")
    return 0


def _cmd_audit(args) -> int:
    config = _load(args)
    mode = "decomposed" if config.mode in ("decomposed", "both") else "baseline"
    problem = experiments._draw_instance(config, 0)
    trace = solver.run(mode, problem, config.solver, record_trace=True)
    audit = analysis.audit_trace(trace, u=args.u)
    report_lines = [
        f"mode            : {mode}",
        f"iterations      : {trace.iterations} (converged: {trace.converged})",
        analysis.certificate_summary(audit.certificate),
        f"contraction ineq: {sum(r.passed for r in audit.lemma1)}/{len(audit.lemma1)} hold",
        f"perturbation ineq: {sum(r.passed for r in audit.lemma2)}/{len(audit.lemma2)} hold",
        f"envelope dominates: {audit.bound.dominated}; tends to zero: {audit.bound.tends_to_zero}",
    ]
    if mode == "decomposed":
        counting = adversary.counting_audit(config.dimension, max(trace.iterations, 1))
        scan = adversary.message_privacy_scan(trace)
        view = adversary.AdversaryView.from_trace(trace, "eavesdropper")
        residuals = []
        if trace.converged:
            for j in range(1, config.topology.num_agents + 1):
                rec = adversary.kkt_recovery_at_optimum(view, j, trace)
                residuals.append(f"agent {j}: residual {rec.residual:.3e} "
                                 f"(internal dual {rec.internal_dual_norm:.3e})")
        report_lines += [
            f"counting audit  : {counting.equations_count} equations vs "
            f">= {counting.unknowns_lower_bound} unknowns "
            f"(underdetermined: {counting.underdetermined})",
            f"message scan    : {'pass' if scan.passed else 'FAIL'} "
            f"({scan.messages_checked} messages)",
            "KKT recovery at the optimum:",
            *(f"  {line}" for line in residuals),
        ]
    else:
        leak = adversary.evaluate_baseline_leak(trace)
        report_lines.append(
            f"baseline leak   : worst relative gradient error {max(leak.values()):.3e}"
        )
    text = "\n".join(report_lines)
    print(text)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        analysis.export_inequality_csv(audit.lemma1, out / "audit_lemma1.csv")
        analysis.export_inequality_csv(audit.lemma2, out / "audit_lemma2.csv")
        bound_lines = ["iteration,h_distance,p,bound"]
        b = audit.bound
        for k, dval in enumerate(b.h_distance):
            pval = b.p[k] if k < len(b.p) else 0.0
            bound_lines.append(f"{k},{repr(dval)},{repr(pval)},{repr(b.bound[k])}")
        (out / "audit_bound.csv").write_text("\n".join(bound_lines) + "\n", encoding="utf-8")
        (out / "audit_summary.txt").write_text(text + "\n", encoding="utf-8")
        solver.export_state_csv(trace, out / "audit_trace_states.csv")
        solver.export_message_csv(trace, out / "audit_trace_messages.csv")
        print(f"audit artifacts written to {out}")
    return 0 if (audit.all_passed and audit.certificate.psd) else 6


def _cmd_compare(args) -> int:
    config = _load(args)
    report = experiments.compare_modes(config, out_dir=args.out)
    print(report.table())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="privadmm",
        description="Decentralized consensus ADMM with privacy-preserving "
                    "function decomposition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment")
    _add_common(p_run)
    p_run.add_argument("--mode", choices=["baseline", "decomposed", "both"], default=None)

    p_audit = sub.add_parser("audit", help="convergence certificate and privacy audits")
    _add_common(p_audit)
    p_audit.add_argument("--u", type=float, default=2.0,
                         help="free constant u > 1 of the contraction certificate")

    p_cmp = sub.add_parser("compare", help="baseline vs decomposed side by side")
    _add_common(p_cmp)

    args = parser.parse_args(argv)
    np.seterr(all="raise", under="ignore")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "audit":
            return _cmd_audit(args)
        return _cmd_compare(args)
    except Exception as exc:  # noqa: BLE001 - single reporting funnel
        category, code = _classify(exc)
        print(json.dumps({"error": {"category": category, "message": str(exc)}}),
              file=sys.stderr)
        return code


if __name__ == "__main__":
    raise SystemExit(main())
