"""Config-driven experiments: repeated seeded runs, the distance metric d,
and side-by-side mode comparisons.

Config files are YAML with four fixed sections; unknown keys anywhere are
rejected.  The reference instance (six agents on a ring with one chord,
targets y_i = [0.1 (i-1) + 0.1, 0.1 (i-1) + 0.2]) ships in
configs/paper_sixagent.yaml.

    experiment:
      name: sixagent            # optional label
      dimension: 2
      runs: 100                 # M
      seed: 12345
      mode: decomposed          # baseline | decomposed | both
      output_dir: out           # optional; CLI --out overrides
    topology:
      num_agents: 6
      edges: [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [1, 6], [1, 4]]
    objectives:
      consensus_targets:        # or quadratics: [{P: [[...]], q: [...], r: 0.0}]
        - [0.1, 0.2]
        - [0.2, 0.3]
        ...
    solver:                     # all optional, defaults shown in SolverConfig
      rho: 1.0
      max_iters: 5000
      primal_tolerance: 1.0e-6
    schedule:                   # decomposed-mode split rule
      m_f: 1.0
      c_scale: 1.0              # c_i ~ U[-c_scale, c_scale]^n
      d_scale: 1.0
      static: false             # true forces c_i = 0

Each run l = 0..M-1 draws its randomness from
numpy.random.SeedSequence(entropy=seed, spawn_key=(l,)), in the fixed
order: public starts, private starts, c coefficients, d coefficients
(all U[-1,1]^n except the scaled schedule draws).  The same draws feed
both modes, so a baseline/decomposed comparison sees one instance.  The
metric

    d = sum_i sum_l ||x_i^l - x_opt||^2 / (N M)

uses the final public state for baseline runs and the public/private
average for decomposed runs; the accumulation is Kahan-compensated so
agent relabeling cannot move the result.  All output files are plain CSV
with shortest-round-trip float formatting: byte-identical for identical
(config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
import yaml

from .adversary import counting_audit, evaluate_baseline_leak, message_privacy_scan
from .graph import Topology, build_topology
from .objectives import (
    DecompositionSchedule,
    ObjectiveHandle,
    QuadraticObjective,
    consensus_objective,
)
from .solver import ConsensusProblem, IterationTrace, SolverConfig
from .solver import export_message_csv, export_state_csv, run

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MetricD",
    "ModeResult",
    "ExperimentResult",
    "ComparisonReport",
    "load_config",
    "analytic_optimum",
    "run_experiment",
    "compare_modes",
]

ExperimentMode = Literal["baseline", "decomposed", "both"]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dimension: int
    runs: int
    seed: int
    mode: ExperimentMode
    output_dir: str | None
    topology: Topology
    targets: tuple[np.ndarray, ...] | None
    quadratics: tuple[QuadraticObjective, ...] | None
    solver: SolverConfig
    m_f: float
    c_scale: float
    d_scale: float
    static_schedule: bool

    def objective_handles(self) -> tuple[ObjectiveHandle, ...]:
        if self.targets is not None:
            return tuple(ObjectiveHandle.from_quadratic(consensus_objective(y))
                         for y in self.targets)
        return tuple(ObjectiveHandle.from_quadratic(q) for q in self.quadratics)

    def optimum(self) -> np.ndarray:
        from .analysis import centralized_optimum

        if self.targets is not None:
            return analytic_optimum(self.targets)
        return centralized_optimum(self.objective_handles())


def _require_mapping(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    return obj


def _reject_unknown(section: dict, allowed: Iterable[str], where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(sorted(unknown))}")


def load_config(path) -> ExperimentConfig:
    """Parse and strictly validate a YAML experiment file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    raw = _require_mapping(raw, "<root>")
    _reject_unknown(raw, ("experiment", "topology", "objectives", "solver", "schedule"),
                    "<root>")
    for required in ("experiment", "topology", "objectives"):
        if required not in raw:
            raise ConfigError(f"missing section '{required}'")

    exp = _require_mapping(raw["experiment"], "experiment")
    _reject_unknown(exp, ("name", "dimension", "runs", "seed", "mode", "output_dir"),
                    "experiment")
    try:
        dimension = int(exp["dimension"])
        runs = int(exp.get("runs", 1))
        seed = int(exp.get("seed", 0))
    except KeyError as exc:
        raise ConfigError(f"experiment section is missing {exc}") from exc
    mode = str(exp.get("mode", "decomposed"))
    if mode not in ("baseline", "decomposed", "both"):
        raise ConfigError(f"mode must be baseline|decomposed|both, got {mode!r}")
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if dimension < 1:
        raise ConfigError("dimension must be >= 1")

    topo = _require_mapping(raw["topology"], "topology")
    _reject_unknown(topo, ("num_agents", "edges"), "topology")
    try:
        topology = build_topology(int(topo["num_agents"]),
                                  [tuple(e) for e in topo["edges"]])
    except KeyError as exc:
        raise ConfigError(f"topology section is missing {exc}") from exc

    objs = _require_mapping(raw["objectives"], "objectives")
    _reject_unknown(objs, ("consensus_targets", "quadratics"), "objectives")
    targets = None
    quadratics = None
    if ("consensus_targets" in objs) == ("quadratics" in objs):
        raise ConfigError("objectives needs exactly one of consensus_targets | quadratics")
    if "consensus_targets" in objs:
        targets = tuple(np.asarray(t, dtype=float) for t in objs["consensus_targets"])
        if len(targets) != topology.num_agents:
            raise ConfigError(f"need {topology.num_agents} targets, got {len(targets)}")
        if any(t.shape != (dimension,) for t in targets):
            raise ConfigError(f"every target must have dimension {dimension}")
    else:
        entries = objs["quadratics"]
        if len(entries) != topology.num_agents:
            raise ConfigError(f"need {topology.num_agents} quadratics, got {len(entries)}")
        parsed = []
        for idx, entry in enumerate(entries):
            entry = _require_mapping(entry, f"objectives.quadratics[{idx}]")
            _reject_unknown(entry, ("P", "q", "r"), f"objectives.quadratics[{idx}]")
            parsed.append(QuadraticObjective(
                P=np.asarray(entry["P"], dtype=float),
                q=np.asarray(entry["q"], dtype=float),
                r=float(entry.get("r", 0.0)),
            ))
            if parsed[-1].dimension != dimension:
                raise ConfigError(f"quadratic {idx} has the wrong dimension")
        quadratics = tuple(parsed)

    solver_raw = _require_mapping(raw.get("solver", {}) or {}, "solver")
    _reject_unknown(solver_raw, ("rho", "gamma_alpha", "gamma_beta", "max_iters",
                                 "primal_tolerance", "inner_solver"), "solver")
    try:
        solver = SolverConfig(
            rho=float(solver_raw.get("rho", 1.0)),
            gamma_alpha=(tuple(float(g) for g in solver_raw["gamma_alpha"])
                         if "gamma_alpha" in solver_raw else None),
            gamma_beta=(tuple(float(g) for g in solver_raw["gamma_beta"])
                        if "gamma_beta" in solver_raw else None),
            max_iters=int(solver_raw.get("max_iters", 5000)),
            primal_tolerance=float(solver_raw.get("primal_tolerance", 1e-8)),
            inner_solver=solver_raw.get("inner_solver", "auto"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sched_raw = _require_mapping(raw.get("schedule", {}) or {}, "schedule")
    _reject_unknown(sched_raw, ("m_f", "c_scale", "d_scale", "static"), "schedule")
    m_f = float(sched_raw.get("m_f", 1.0))
    if m_f <= 0:
        raise ConfigError("schedule m_f must be positive")

    return ExperimentConfig(
        name=str(exp.get("name", Path(path).stem)),
        dimension=dimension,
        runs=runs,
        seed=seed,
        mode=mode,
        output_dir=exp.get("output_dir"),
        topology=topology,
        targets=targets,
        quadratics=quadratics,
        solver=solver,
        m_f=m_f,
        c_scale=float(sched_raw.get("c_scale", 1.0)),
        d_scale=float(sched_raw.get("d_scale", 1.0)),
        static_schedule=bool(sched_raw.get("static", False)),
    )


def analytic_optimum(targets) -> np.ndarray:
    """Mean of the consensus targets: closed-form optimum of the sum of
    squared distances."""
    targets = [np.asarray(t, dtype=float) for t in targets]
    if not targets:
        raise ValueError("need at least one target")
    return sum(targets) / float(len(targets))


def _kahan(values: Iterable[float]) -> float:
    total = 0.0
    carry = 0.0
    for v in values:
        y = v - carry
        t = total + y
        carry = (t - total) - y
        total = t
    return total


@dataclass(frozen=True)
class MetricD:
    """Average squared distance to the optimum over runs and agents."""

    value: float
    per_run: np.ndarray  # (runs, agents) squared distances

    @property
    def runs(self) -> int:
        return self.per_run.shape[0]

    @property
    def agents(self) -> int:
        return self.per_run.shape[1]


def _metric_from_squares(squares: np.ndarray) -> MetricD:
    m, n_agents = squares.shape
    total = _kahan(float(v) for v in squares.reshape(-1))
    return MetricD(value=total / float(n_agents * m), per_run=squares)


def _draw_instance(config: ExperimentConfig, run_index: int):
    """Per-run randomness, in a fixed draw order shared by both modes."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(run_index,))
    )
    n_agents = config.topology.num_agents
    n = config.dimension
    x0_alpha = tuple(rng.uniform(-1.0, 1.0, n) for _ in range(n_agents))
    x0_beta = tuple(rng.uniform(-1.0, 1.0, n) for _ in range(n_agents))
    c = [rng.uniform(-config.c_scale, config.c_scale, n) for _ in range(n_agents)]
    d = [rng.uniform(-config.d_scale, config.d_scale, n) for _ in range(n_agents)]
    if config.static_schedule:
        schedules = tuple(DecompositionSchedule.static(n, config.m_f, d=d[i])
                          for i in range(n_agents))
    else:
        schedules = tuple(DecompositionSchedule(m_f=config.m_f, c=c[i], d=d[i])
                          for i in range(n_agents))
    return ConsensusProblem(
        topology=config.topology,
        objectives=config.objective_handles(),
        x0_alpha=x0_alpha,
        x0_beta=x0_beta,
        schedules=schedules,
    )


def _final_points(trace: IterationTrace) -> list[np.ndarray]:
    if trace.mode == "decomposed":
        return [(s.x_alpha + s.x_beta) / 2.0 for s in trace.final_states]
    return [s.x_alpha for s in trace.final_states]


@dataclass(frozen=True)
class ModeResult:
    mode: str
    metric: MetricD
    iterations: list[int]
    converged: list[bool]
    first_trace: IterationTrace


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    optimum: np.ndarray
    results: dict[str, ModeResult]
    output_dir: Path | None


def _run_mode(config: ExperimentConfig, mode: str) -> ModeResult:
    x_opt = config.optimum()
    n_agents = config.topology.num_agents
    squares = np.empty((config.runs, n_agents))
    iterations = []
    converged = []
    first_trace = None
    for l in range(config.runs):
        problem = _draw_instance(config, l)
        trace = run(mode, problem, config.solver, record_trace=(l == 0))
        if l == 0:
            first_trace = trace
        for i, point in enumerate(_final_points(trace)):
            diff = point - x_opt
            squares[l, i] = float(diff @ diff)
        iterations.append(trace.iterations)
        converged.append(trace.converged)
    return ModeResult(mode=mode, metric=_metric_from_squares(squares),
                      iterations=iterations, converged=converged,
                      first_trace=first_trace)


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_distances_csv(result: ModeResult, path: Path) -> None:
    lines = ["run,agent,squared_distance,iterations,converged"]
    for l in range(result.metric.runs):
        for i in range(result.metric.agents):
            lines.append(",".join([
                str(l), str(i + 1), _fmt(result.metric.per_run[l, i]),
                str(result.iterations[l]), str(int(result.converged[l])),
            ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_metric_csv(results: dict[str, ModeResult], optimum: np.ndarray, path: Path) -> None:
    lines = ["mode,runs,agents,d,converged_runs,max_iterations,optimum"]
    for mode, res in results.items():
        lines.append(",".join([
            mode, str(res.metric.runs), str(res.metric.agents),
            _fmt(res.metric.value), str(sum(res.converged)),
            str(max(res.iterations) if res.iterations else 0),
            "[" + " ".join(_fmt(v) for v in optimum) + "]",
        ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Execute M seeded runs per requested mode and write the CSV bundle.

    Writes, per mode: the per-run squared distances, the first run's full
    state/message traces (plot data), and a shared metric summary.
    Returns the in-memory results; file output is skipped when neither
    `out_dir` nor the config names a directory.
    """
    modes = ["baseline", "decomposed"] if config.mode == "both" else [config.mode]
    results = {mode: _run_mode(config, mode) for mode in modes}
    out_path = None
    target_dir = out_dir if out_dir is not None else config.output_dir
    if target_dir is not None:
        out_path = Path(target_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        for mode, res in results.items():
            _write_distances_csv(res, out_path / f"{mode}_distances.csv")
            export_state_csv(res.first_trace, out_path / f"{mode}_run0_states.csv")
            export_message_csv(res.first_trace, out_path / f"{mode}_run0_messages.csv")
        _write_metric_csv(results, config.optimum(), out_path / "metric_summary.csv")
    return ExperimentResult(config=config, optimum=config.optimum(),
                            results=results, output_dir=out_path)


@dataclass(frozen=True)
class ComparisonReport:
    """Baseline vs decomposed on one instance, optimization and privacy."""

    limit_distance: float
    baseline_iterations: int
    decomposed_iterations: int
    baseline_d: float
    decomposed_d: float
    baseline_leak_worst: float
    counting: "object"
    privacy_scan_passed: bool

    def table(self) -> str:
        c = self.counting
        rows = [
            ("limit-point distance", f"{self.limit_distance:.3e}", ""),
            ("iterations to tolerance", str(self.baseline_iterations),
             str(self.decomposed_iterations)),
            ("metric d", f"{self.baseline_d:.3e}", f"{self.decomposed_d:.3e}"),
            ("gradient leak (worst rel err)", f"{self.baseline_leak_worst:.3e}",
             "n/a (underdetermined)"),
            ("inference system", "2nK equations, solvable",
             f"{c.equations_count} eqs vs >= {c.unknowns_lower_bound} unknowns"),
            ("underdetermined", "no", "yes" if c.underdetermined else "NO"),
            ("wire carries private data", "yes (states leak gradients)",
             "no" if self.privacy_scan_passed else "YES"),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{'':{width}}  {'baseline':>28}  {'decomposed':>34}"]
        for label, b, d in rows:
            lines.append(f"{label:{width}}  {b:>28}  {d:>34}")
        return "\n".join(lines)


def compare_modes(config: ExperimentConfig, out_dir=None) -> ComparisonReport:
    """Run both modes on the same instances and collate the contrasts.

    Limit agreement and the privacy audits use run 0; the metric d covers
    all configured runs of each mode.
    """
    both = replace(config, mode="both")
    result = run_experiment(both, out_dir=out_dir)
    base = result.results["baseline"]
    deco = result.results["decomposed"]
    base_pts = _final_points(base.first_trace)
    deco_pts = _final_points(deco.first_trace)
    limit_distance = max(float(np.linalg.norm(b - d))
                         for b, d in zip(base_pts, deco_pts))
    leak = evaluate_baseline_leak(base.first_trace)
    counting = counting_audit(config.dimension, max(deco.first_trace.iterations, 1))
    scan = message_privacy_scan(deco.first_trace)
    report = ComparisonReport(
        limit_distance=limit_distance,
        baseline_iterations=base.first_trace.iterations,
        decomposed_iterations=deco.first_trace.iterations,
        baseline_d=base.metric.value,
        decomposed_d=deco.metric.value,
        baseline_leak_worst=max(leak.values()),
        counting=counting,
        privacy_scan_passed=scan.passed,
    )
    if out_dir is not None or config.output_dir is not None:
        out_path = Path(out_dir if out_dir is not None else config.output_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "comparison.txt").write_text(report.table() + "\n", encoding="utf-8")
    return report
