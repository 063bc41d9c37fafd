"""Batch experiment runner and report aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .backends import HttpBackend, NoiseConfig, ScriptedBackend
from .config import RunConfig
from .errors import ConfigError
from .metrics import MetricInputs, compute_metrics
from .planner import PlannerState, RunReport
from .scenario import Scenario, load_scenario

_SEED_STRIDE = 1000003  # counter-based per-run seed derivation


def derive_seed(master_seed: int, index: int) -> int:
    return (master_seed * _SEED_STRIDE + index) % (2**32)


def make_backend(scenario: Scenario, scene, cfg: RunConfig, seed: int):
    if cfg.backend == "scripted":
        return ScriptedBackend(scenario, scene, noise=cfg.noise, seed=seed)
    if cfg.backend == "http":
        return HttpBackend()
    raise ConfigError(f"unknown backend {cfg.backend!r}")


def run_scenario(scenario: Scenario, cfg: RunConfig, seed: int = 0) -> RunReport:
    """One seeded run of one scenario."""
    scene = scenario.build_scene()
    backend = make_backend(scenario, scene, cfg, seed)
    return PlannerState(scenario, backend, cfg.planner, seed=seed).run()


@dataclass
class BatchResult:
    aggregate: MetricInputs
    reports: list
    failures: list  # (path, reason) for scenarios that did not parse
    master_seed: int

    def to_dict(self) -> dict:
        """Deterministic aggregate document (no wall-clock content)."""
        metrics = compute_metrics(self.aggregate)
        return {
            "master_seed": self.master_seed,
            "metrics": metrics.to_dict(),
            "counters": {
                "plan_attempts": self.aggregate.plan_attempts,
                "plan_successes": self.aggregate.plan_successes,
                "subtask_attempts": self.aggregate.subtask_attempts,
                "subtask_successes": self.aggregate.subtask_successes,
                "task_attempts": self.aggregate.task_attempts,
                "task_successes": self.aggregate.task_successes,
                "slpc_pairs": len(self.aggregate.semantic_location_pairs),
                "slpc_correct": sum(
                    1 for p in self.aggregate.semantic_location_pairs if p.correct()
                ),
            },
            "parse_failures": [{"path": str(p), "reason": r} for p, r in self.failures],
            "runs": [r.to_dict(include_wall_time=False) for r in self.reports],
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def run_batch(
    scenario_paths: Sequence,
    cfg: RunConfig,
    repetitions: int = 1,
    master_seed: int = 0,
) -> BatchResult:
    """Run every scenario `repetitions` times with derived seeds.

    Scenario files that fail to parse are listed in the result and excluded
    from the aggregate counters.
    """
    aggregate = MetricInputs()
    reports: list[RunReport] = []
    failures: list = []
    index = 0
    for path in scenario_paths:
        try:
            scenario = load_scenario(path)
        except ConfigError as exc:
            failures.append((path, str(exc)))
            continue
        for _ in range(repetitions):
            seed = derive_seed(master_seed, index)
            index += 1
            report = run_scenario(scenario, cfg, seed=seed)
            reports.append(report)
            aggregate.merge(report.metric_inputs)
    return BatchResult(aggregate, reports, failures, master_seed)


def score_report(path) -> dict:
    """Recompute metrics from the counters stored in a report file."""
    doc = json.loads(Path(path).read_text())
    counters = doc.get("counters", {})
    inputs = MetricInputs(
        plan_attempts=counters.get("plan_attempts", 0),
        plan_successes=counters.get("plan_successes", 0),
        subtask_attempts=counters.get("subtask_attempts", 0),
        subtask_successes=counters.get("subtask_successes", 0),
        task_attempts=counters.get("task_attempts", 0),
        task_successes=counters.get("task_successes", 0),
    )
    metrics = compute_metrics(inputs).to_dict()
    # SLPC travels as pre-scored pair outcomes in reports.
    pairs = doc.get("slpc_pairs", [])
    if "runs" in doc:
        pairs = [p for run in doc["runs"] for p in run.get("slpc_pairs", [])]
    if pairs:
        metrics["slpc"] = 100.0 * sum(1 for p in pairs if p["correct"]) / len(pairs)
    return metrics
