"""VLM interaction layer: prompt synthesis and structured response parsing.

Prompts are mode-specific section bundles; responses are strict JSON
documents with a top-level `kind` discriminator. Anything that fails schema
validation is rejected before it can reach the planner.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .envelope import ComponentVoxels
from .errors import MalformedResponseError, NoActiveSubtaskError
from .geometry import Observation, RigidTransform
from .scene_graph import SceneSnapshot
from .task_memory import ActionKind, SubtaskNode, TaskMemory

COARSE_SECTIONS = ("TTP_motion", "E_motion", "SS_motion", "S_global", "MSH_similar")
FINE_SECTIONS = ("TTP_motion", "S_local", "D_t", "SS_motion", "MSH_similar")

ACTION_VERBS = ("MoveTo", "Grasp", "Release", "InsertAlong", "Retreat")


class Mode(enum.Enum):
    COARSE = "coarse"
    FINE = "fine"


class ResponseKind(enum.Enum):
    SEGMENTATION = "segmentation"
    RELATIONSHIPS = "relationships"
    PLAN = "plan"
    ACTION = "action"


@dataclass(frozen=True)
class PromptBundle:
    mode: Mode
    sections: tuple  # ordered (tag, text) pairs
    images: Optional[tuple] = None

    def __post_init__(self):
        tags = tuple(tag for tag, _ in self.sections)
        expected = COARSE_SECTIONS if self.mode is Mode.COARSE else FINE_SECTIONS
        if tags != expected:
            raise ValueError(f"section tags {tags} do not match {self.mode}")

    def text(self) -> str:
        return "\n\n".join(f"[{tag}]\n{body}" for tag, body in self.sections)


@dataclass(frozen=True)
class ActionCommand:
    verb: str
    target: Optional[object] = None  # vertex id or 3-vector
    parameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SegmentedObject:
    id: str
    category: str
    pixels: np.ndarray  # (N, 2) integer (u, v)


@dataclass(frozen=True)
class VlmResponse:
    kind: ResponseKind
    payload: object
    raw: bytes = b""


# -- queries --------------------------------------------------------------

@dataclass(frozen=True)
class SegmentationQuery:
    obs: Observation
    task_description: str
    ground_truth: Optional[object] = None  # GroundTruthFrame; scripted backend only


@dataclass(frozen=True)
class RelationshipQuery:
    pairs: tuple  # ((src_id, dst_id), ...)
    task_description: str


@dataclass(frozen=True)
class PlanQuery:
    task_description: str
    snapshot: Optional[SceneSnapshot] = None


@dataclass(frozen=True)
class ActionQuery:
    prompt: PromptBundle
    subtask: SubtaskNode
    attempt_index: int
    mode: Mode


# -- prompt rendering -----------------------------------------------------

def _mm(x: float) -> str:
    return f"{x * 1000:.1f}"


def _vec_mm(v: np.ndarray) -> str:
    return "[" + ", ".join(_mm(float(x)) for x in v) + "] mm"


def _ttp_section(memory: TaskMemory, node: SubtaskNode) -> str:
    deps = ", ".join(node.depends_on) if node.depends_on else "none"
    return (
        f"Active subtask: {node.id} ({node.action_kind.value}) targeting "
        f"{node.target_object}. {node.description} Dependencies: {deps}."
    )


def _ss_section(memory: TaskMemory) -> str:
    done = sum(1 for s in memory.statuses.values() if s.status.value == "succeeded")
    parts = [
        f"{n.id}={memory.statuses[n.id].status.value}"
        f"(attempts={memory.statuses[n.id].attempts})"
        for n in memory.plan
    ]
    return f"{done}/{len(memory.plan)} subtasks succeeded. " + "; ".join(parts)


def _msh_section(memory: TaskMemory, node: SubtaskNode, snapshot: SceneSnapshot) -> str:
    category = _category_of(snapshot, node.target_object)
    records = memory.query_similar(node.action_kind, category)
    if not records:
        return "none"
    return "\n".join(
        f"t={r.timestamp} {r.subtask_id} {r.action_kind.value} on "
        f"{r.target_category}: {r.outcome.value}"
        for r in records
    )


def _category_of(snapshot: SceneSnapshot, vid: str) -> str:
    vertex = snapshot.vertices.get(vid)
    return vertex.category if vertex is not None else vid


def _edges_section(snapshot: SceneSnapshot, target: str) -> str:
    lines = [
        f"{e.src} --{e.rel_type}--> {e.dst}"
        for e in snapshot.edges.values()
        if target in (e.src, e.dst)
    ]
    return "\n".join(sorted(lines)) if lines else "none"


def _envelope_line(snapshot: SceneSnapshot, vertex) -> str:
    env = snapshot.envelopes[vertex.spatial_index]
    extents = np.sqrt(np.maximum(np.linalg.eigvalsh(env.sigma), 0.0))
    return (
        f"{vertex.id} ({vertex.category}): center {_vec_mm(env.mu)}, "
        f"extents {_vec_mm(extents)}"
    )


def _global_spatial_section(snapshot: SceneSnapshot) -> str:
    vertices = sorted(snapshot.vertices.values(), key=lambda v: v.id)
    if not vertices:
        return "none"
    return "\n".join(_envelope_line(snapshot, v) for v in vertices)


def _local_spatial_section(
    snapshot: SceneSnapshot,
    target: str,
    components: Sequence[ComponentVoxels],
    voxel_size: float,
) -> str:
    vertex = snapshot.vertices.get(target)
    header = _envelope_line(snapshot, vertex) if vertex is not None else f"{target}: unknown"
    if not components:
        return header + "\nsub-components: none"
    lines = [header]
    for comp in sorted(components, key=lambda c: c.component_id):
        cells = np.array(sorted(comp.voxels))
        span = (cells.max(axis=0) - cells.min(axis=0) + 1) * voxel_size
        lines.append(
            f"component {comp.component_id}: {len(comp.voxels)} voxels, "
            f"extent {_vec_mm(span)}"
        )
    return "\n".join(lines)


def _sensor_section(
    obs: Observation, effector_pos: np.ndarray, target_mu: np.ndarray
) -> str:
    offset = target_mu - effector_pos
    axis = int(np.argmax(np.abs(offset)))
    axis_name = "xyz"[axis]
    return (
        f"End-effector at {_vec_mm(effector_pos)}. Target offset "
        f"{_vec_mm(offset)} ({_mm(abs(float(offset[axis])))} mm along {axis_name}). "
        f"Frame {obs.timestamp}: {int(np.count_nonzero(obs.depth > 0))} valid depth pixels."
    )


def _active_or_raise(memory: TaskMemory) -> SubtaskNode:
    node = memory.active()
    if node is None:
        raise NoActiveSubtaskError("prompt requires an active subtask")
    return node


def build_coarse_prompt(memory: TaskMemory, snapshot: SceneSnapshot) -> PromptBundle:
    """Global-navigation prompt: task goal, topology, statuses, all envelopes."""
    node = _active_or_raise(memory)
    sections = (
        ("TTP_motion", _ttp_section(memory, node)),
        ("E_motion", _edges_section(snapshot, node.target_object)),
        ("SS_motion", _ss_section(memory)),
        ("S_global", _global_spatial_section(snapshot)),
        ("MSH_similar", _msh_section(memory, node, snapshot)),
    )
    return PromptBundle(Mode.COARSE, sections)


def build_fine_prompt(
    memory: TaskMemory,
    snapshot: SceneSnapshot,
    obs: Observation,
    effector_pos: np.ndarray,
    components: Sequence[ComponentVoxels] = (),
    voxel_size: float = 0.001,
) -> PromptBundle:
    """Precision-manipulation prompt: local geometry plus live sensor data."""
    node = _active_or_raise(memory)
    vertex = snapshot.vertices.get(node.target_object)
    if vertex is not None:
        target_mu = snapshot.envelopes[vertex.spatial_index].mu
    else:
        target_mu = np.asarray(effector_pos, dtype=float)
    sections = (
        ("TTP_motion", _ttp_section(memory, node)),
        ("S_local", _local_spatial_section(snapshot, node.target_object, components, voxel_size)),
        ("D_t", _sensor_section(obs, np.asarray(effector_pos, dtype=float), target_mu)),
        ("SS_motion", _ss_section(memory)),
        ("MSH_similar", _msh_section(memory, node, snapshot)),
    )
    return PromptBundle(Mode.FINE, sections)


# -- response parsing -----------------------------------------------------

def _require(doc: dict, key: str, kind: str):
    if key not in doc:
        raise MalformedResponseError(f"{kind} response missing {key!r}")
    return doc[key]


def _parse_segmentation(doc: dict):
    objects = []
    for entry in _require(doc, "objects", "segmentation"):
        oid = _require(entry, "id", "segmentation")
        category = _require(entry, "category", "segmentation")
        pixels = _require(entry, "pixels", "segmentation")
        arr = np.asarray(pixels, dtype=int)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise MalformedResponseError("segmentation pixels must be (u, v) pairs")
        if not isinstance(oid, str) or not isinstance(category, str) or not category:
            raise MalformedResponseError("segmentation id/category must be strings")
        objects.append(SegmentedObject(oid, category, arr))
    return objects


def _parse_relationships(doc: dict):
    assertions = []
    for entry in _require(doc, "assertions", "relationships"):
        src = _require(entry, "src", "relationships")
        dst = _require(entry, "dst", "relationships")
        rel = _require(entry, "rel_type", "relationships")
        if not all(isinstance(x, str) for x in (src, dst, rel)):
            raise MalformedResponseError("relationship fields must be strings")
        assertions.append((src, dst, rel, dict(entry.get("constraints", {}))))
    return assertions


def _parse_plan(doc: dict):
    nodes = []
    for entry in _require(doc, "subtasks", "plan"):
        kind_raw = _require(entry, "action_kind", "plan")
        try:
            kind = ActionKind(kind_raw)
        except ValueError as exc:
            raise MalformedResponseError(f"unknown action kind {kind_raw!r}") from exc
        nodes.append(
            SubtaskNode(
                id=_require(entry, "id", "plan"),
                description=entry.get("description", ""),
                action_kind=kind,
                target_object=_require(entry, "target_object", "plan"),
                depends_on=tuple(entry.get("depends_on", ())),
            )
        )
    return nodes


_VERB_REQUIRED_PARAMS = {
    "MoveTo": (),
    "Grasp": (),
    "Release": (),
    "InsertAlong": ("axis", "distance"),
    "Retreat": (),
}


def _parse_action(doc: dict):
    verb = _require(doc, "verb", "action")
    if verb not in ACTION_VERBS:
        raise MalformedResponseError(f"unknown action verb {verb!r}")
    target = doc.get("target")
    if verb == "MoveTo":
        if not (isinstance(target, (list, tuple)) and len(target) == 3):
            raise MalformedResponseError("MoveTo requires a 3-vector target")
        target = [float(x) for x in target]
    params = dict(doc.get("parameters", {}))
    for key in _VERB_REQUIRED_PARAMS[verb]:
        if key not in params:
            raise MalformedResponseError(f"{verb} requires parameter {key!r}")
    return ActionCommand(verb=verb, target=target, parameters=params)


_PARSERS = {
    ResponseKind.SEGMENTATION: _parse_segmentation,
    ResponseKind.RELATIONSHIPS: _parse_relationships,
    ResponseKind.PLAN: _parse_plan,
    ResponseKind.ACTION: _parse_action,
}


def parse_response(raw: bytes) -> VlmResponse:
    """Decode and validate a backend payload; reject anything off-schema."""
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponseError(f"payload is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedResponseError("payload must be a JSON object")
    kind_raw = doc.get("kind")
    try:
        kind = ResponseKind(kind_raw)
    except ValueError as exc:
        raise MalformedResponseError(f"unknown response kind {kind_raw!r}") from exc
    payload = _PARSERS[kind](doc)
    return VlmResponse(kind=kind, payload=payload, raw=raw)


def request(backend, query) -> VlmResponse:
    """Send a query to a backend and return the parsed, validated response."""
    raw = backend.handle(query)
    return parse_response(raw)
