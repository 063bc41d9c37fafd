"""Persistent task memory: subtask DAG, status map, and motion history."""

from __future__ import annotations

import enum
import graphlib
from dataclasses import dataclass, field
from typing import Optional

from .errors import InvalidPlanError, MissingSubtaskError


class ActionKind(enum.Enum):
    APPROACH = "approach"
    GRASP = "grasp"
    ALIGN = "align"
    INSERT = "insert"
    PLACE = "place"
    RELEASE = "release"


class Status(enum.Enum):
    PENDING = "pending"
    ACTIVE = "active"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class Outcome(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class SubtaskNode:
    id: str
    description: str
    action_kind: ActionKind
    target_object: str
    depends_on: tuple = ()


@dataclass
class SubtaskStatus:
    subtask_id: str
    status: Status = Status.PENDING
    attempts: int = 0


@dataclass(frozen=True)
class MotionRecord:
    subtask_id: str
    action_kind: ActionKind
    target_category: str
    parameters: dict
    outcome: Outcome
    timestamp: int


class TaskMemory:
    """TTP (subtask DAG) + SS (status map) + MSH (motion history stack)."""

    def __init__(self, plan: list[SubtaskNode], retry_cap: int = 5):
        self.plan = list(plan)
        self.retry_cap = retry_cap
        self.statuses: dict[str, SubtaskStatus] = {
            node.id: SubtaskStatus(node.id) for node in self.plan
        }
        self.history: list[MotionRecord] = []
        self._nodes = {node.id: node for node in self.plan}

    # -- queries ----------------------------------------------------------
    def node(self, subtask_id: str) -> SubtaskNode:
        node = self._nodes.get(subtask_id)
        if node is None:
            raise MissingSubtaskError(subtask_id)
        return node

    def active(self) -> Optional[SubtaskNode]:
        for node in self.plan:
            if self.statuses[node.id].status is Status.ACTIVE:
                return node
        return None

    def ready(self) -> list[SubtaskNode]:
        """Pending subtasks whose dependencies have all succeeded."""
        out = []
        for node in self.plan:
            if self.statuses[node.id].status is not Status.PENDING:
                continue
            if all(self.statuses[d].status is Status.SUCCEEDED for d in node.depends_on):
                out.append(node)
        return out

    def complete(self) -> bool:
        return all(s.status is Status.SUCCEEDED for s in self.statuses.values())

    def failed(self) -> bool:
        return any(s.status is Status.FAILED for s in self.statuses.values())

    def activate_next(self) -> Optional[SubtaskNode]:
        """Promote the first ready subtask (plan order) if none is active."""
        if self.active() is not None:
            return self.active()
        ready = self.ready()
        if not ready:
            return None
        self.statuses[ready[0].id].status = Status.ACTIVE
        return ready[0]

    # -- mutation ---------------------------------------------------------
    def update(self, result: MotionRecord, scene=None) -> None:
        """Append a motion record and advance the status machine.

        Success completes the subtask and activates the next ready one;
        failure increments attempts and keeps the subtask active for a fine
        retry until the retry cap marks it failed. The scene snapshot is
        accepted for interface symmetry; statuses depend only on outcomes.
        """
        status = self.statuses.get(result.subtask_id)
        if status is None:
            raise MissingSubtaskError(result.subtask_id)
        if self.history and result.timestamp < self.history[-1].timestamp:
            raise ValueError("motion record timestamps must be non-decreasing")
        self.history.append(result)
        status.attempts += 1
        if result.outcome is Outcome.SUCCESS:
            status.status = Status.SUCCEEDED
            self.activate_next()
        else:
            if status.attempts >= self.retry_cap:
                status.status = Status.FAILED

    def query_similar(
        self, action_kind: ActionKind, target_category: str, cap: int = 5
    ) -> list[MotionRecord]:
        """Most recent records matching (action kind, target category)."""
        matches = [
            rec
            for rec in reversed(self.history)
            if rec.action_kind is action_kind and rec.target_category == target_category
        ]
        return matches[:cap]

    def to_dump(self) -> dict:
        return {
            "ttp": [
                {
                    "id": n.id,
                    "description": n.description,
                    "action_kind": n.action_kind.value,
                    "target_object": n.target_object,
                    "depends_on": list(n.depends_on),
                }
                for n in self.plan
            ],
            "statuses": {
                sid: {"status": s.status.value, "attempts": s.attempts}
                for sid, s in sorted(self.statuses.items())
            },
            "history": [
                {
                    "subtask_id": r.subtask_id,
                    "action_kind": r.action_kind.value,
                    "target_category": r.target_category,
                    "outcome": r.outcome.value,
                    "timestamp": r.timestamp,
                }
                for r in self.history
            ],
        }


def init_from_plan(plan: list[SubtaskNode], retry_cap: int = 5) -> TaskMemory:
    """Build task memory from a subtask plan, rejecting cycles and dangles."""
    if not plan:
        raise InvalidPlanError("plan is empty")
    ids = [node.id for node in plan]
    if len(set(ids)) != len(ids):
        raise InvalidPlanError("duplicate subtask ids")
    known = set(ids)
    sorter = graphlib.TopologicalSorter()
    for node in plan:
        for dep in node.depends_on:
            if dep not in known:
                raise InvalidPlanError(f"unknown dependency {dep!r} of {node.id!r}")
        sorter.add(node.id, *node.depends_on)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        raise InvalidPlanError(f"cyclic dependencies: {exc}") from exc
    return TaskMemory(plan, retry_cap=retry_cap)
