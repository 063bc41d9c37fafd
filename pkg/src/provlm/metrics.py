"""Evaluation metrics: semantic-location pairing and success rates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AccountingError

SLPC_INFLATE = 0.010  # meters added around the ground-truth bounding box


@dataclass(frozen=True)
class SemanticLocationPair:
    """One ground-truth object paired with the prediction for its id."""

    gt_id: str
    gt_category: str
    box_lo: tuple
    box_hi: tuple
    predicted_category: Optional[str] = None
    predicted_center: Optional[tuple] = None

    def correct(self) -> bool:
        if self.predicted_category != self.gt_category or self.predicted_center is None:
            return False
        center = np.asarray(self.predicted_center, dtype=float)
        lo = np.asarray(self.box_lo, dtype=float)
        hi = np.asarray(self.box_hi, dtype=float)
        return bool(np.all(center >= lo) and np.all(center <= hi))


@dataclass
class MetricInputs:
    semantic_location_pairs: list = field(default_factory=list)
    plan_attempts: int = 0
    plan_successes: int = 0
    subtask_attempts: int = 0
    subtask_successes: int = 0
    task_attempts: int = 0
    task_successes: int = 0

    def validate(self) -> None:
        for succ, att, name in (
            (self.plan_successes, self.plan_attempts, "plan"),
            (self.subtask_successes, self.subtask_attempts, "subtask"),
            (self.task_successes, self.task_attempts, "task"),
        ):
            if succ > att:
                raise AccountingError(f"{name} successes {succ} exceed attempts {att}")

    def merge(self, other: "MetricInputs") -> None:
        self.semantic_location_pairs.extend(other.semantic_location_pairs)
        self.plan_attempts += other.plan_attempts
        self.plan_successes += other.plan_successes
        self.subtask_attempts += other.subtask_attempts
        self.subtask_successes += other.subtask_successes
        self.task_attempts += other.task_attempts
        self.task_successes += other.task_successes


@dataclass(frozen=True)
class MetricsReport:
    slpc: Optional[float]
    tpsr: Optional[float]
    msr: Optional[float]
    tsr: Optional[float]

    def to_dict(self) -> dict:
        # Undefined metrics stay null in reports; never collapsed to 0.
        return {"slpc": self.slpc, "tpsr": self.tpsr, "msr": self.msr, "tsr": self.tsr}


def compute_slpc(pairs: Sequence[SemanticLocationPair]) -> Optional[float]:
    """Percentage of ground-truth objects correctly identified and located."""
    if not pairs:
        return None
    correct = sum(1 for pair in pairs if pair.correct())
    return 100.0 * correct / len(pairs)


def compute_rate(successes: int, attempts: int) -> Optional[float]:
    """Shared success-rate formula for TPSR, MSR, and TSR."""
    if attempts < 0:
        raise AccountingError("attempts cannot be negative")
    if successes > attempts:
        raise AccountingError(f"successes {successes} exceed attempts {attempts}")
    if attempts == 0:
        return None
    return 100.0 * successes / attempts


def compute_metrics(inputs: MetricInputs) -> MetricsReport:
    inputs.validate()
    return MetricsReport(
        slpc=compute_slpc(inputs.semantic_location_pairs),
        tpsr=compute_rate(inputs.plan_successes, inputs.plan_attempts),
        msr=compute_rate(inputs.subtask_successes, inputs.subtask_attempts),
        tsr=compute_rate(inputs.task_successes, inputs.task_attempts),
    )
