"""Progressive planning loop: per-iteration perception, memory, and action.

Every iteration runs three stages: build the spatial-semantic view of the
latest frame, refresh the dual-layer scene memory, then pick the coarse or
fine strategy by effector-to-target distance and execute one action. Fine
retries are unrolled across iterations so each attempt is preceded by a
fresh observation and the global iteration bound also bounds retries.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envelope import EnvelopeUpdateConfig, GaussianEnvelope, update_envelope_zoned, voxelize_components
from .errors import InvalidPlanError, MalformedResponseError, NoDepthError
from .geometry import backproject_pixels, centroid_to_space
from .metrics import MetricInputs, SemanticLocationPair, SLPC_INFLATE
from .partition import Zone, ZoneConfig, classify_zone, register_pixel, snap_cloud
from .scenario import Scenario
from .scene_graph import SceneGraph, VertexState, normalized_distance
from .sim import apply_action, check_subtask_success, render
from .task_memory import (
    ActionKind,
    MotionRecord,
    Outcome,
    Status,
    TaskMemory,
    init_from_plan,
)
from .vlm import (
    ActionQuery,
    Mode,
    PlanQuery,
    RelationshipQuery,
    ResponseKind,
    SegmentationQuery,
    build_coarse_prompt,
    build_fine_prompt,
    request,
)

_CANDIDATE_DISTANCE = 8.0  # normalized-distance cutoff for relation queries

_STAGES = (
    "observe",
    "segment",
    "register",
    "update_graph",
    "prompt",
    "act",
    "update_memory",
)


@dataclass(frozen=True)
class PlannerConfig:
    max_iterations: int = 50
    tau: Optional[float] = None  # defaults to the near-zone radius r1
    retry_cap: int = 5
    zone_cfg: ZoneConfig = field(default_factory=ZoneConfig)
    env_cfg: EnvelopeUpdateConfig = field(default_factory=EnvelopeUpdateConfig)
    validate_geometry: bool = True
    replan_on_failure: bool = False
    pixels_per_object: int = 300
    registration_rays: int = 4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def effective_tau(self) -> float:
        return self.tau if self.tau is not None else self.zone_cfg.r1


@dataclass
class IterationTrace:
    iteration: int
    mode: Optional[str]
    prompt_hash: str
    action: str
    outcome: str
    edge_count: int
    wall_time: float
    stages: tuple = _STAGES
    effector: tuple = ()
    target_mu: tuple = ()

    def to_dict(self, include_wall_time: bool = True) -> dict:
        doc = {
            "iteration": self.iteration,
            "mode": self.mode,
            "prompt_hash": self.prompt_hash,
            "action": self.action,
            "outcome": self.outcome,
            "edge_count": self.edge_count,
            "stages": list(self.stages),
            "effector": list(self.effector),
            "target_mu": list(self.target_mu),
        }
        if include_wall_time:
            doc["wall_time"] = self.wall_time
        return doc


@dataclass
class RunReport:
    scenario: str
    seed: int
    completed: bool
    success: bool
    iterations: int
    traces: list
    metric_inputs: MetricInputs
    graph_dump: dict
    memory_dump: dict
    failure_reason: str = ""

    def to_dict(self, include_wall_time: bool = True) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "completed": self.completed,
            "success": self.success,
            "iterations": self.iterations,
            "traces": [t.to_dict(include_wall_time) for t in self.traces],
            "counters": {
                "plan_attempts": self.metric_inputs.plan_attempts,
                "plan_successes": self.metric_inputs.plan_successes,
                "subtask_attempts": self.metric_inputs.subtask_attempts,
                "subtask_successes": self.metric_inputs.subtask_successes,
                "task_attempts": self.metric_inputs.task_attempts,
                "task_successes": self.metric_inputs.task_successes,
            },
            "slpc_pairs": [
                {
                    "gt_id": p.gt_id,
                    "gt_category": p.gt_category,
                    "correct": p.correct(),
                }
                for p in self.metric_inputs.semantic_location_pairs
            ],
            "graph": self.graph_dump,
            "memory": self.memory_dump,
            "failure_reason": self.failure_reason,
        }


def mode_select(target_mu: np.ndarray, effector: np.ndarray, tau: float) -> Mode:
    """Coarse iff the effector is farther than tau from the target."""
    distance = float(np.linalg.norm(np.asarray(target_mu) - np.asarray(effector)))
    return Mode.COARSE if distance > tau else Mode.FINE


class PlannerState:
    """Everything one run owns: scene, graph, memory, backend, counters."""

    def __init__(self, scenario: Scenario, backend, cfg: PlannerConfig, seed: int = 0):
        self.scenario = scenario
        self.cfg = cfg
        self.seed = seed
        self.scene = backend.scene if hasattr(backend, "scene") else scenario.build_scene()
        self.backend = backend
        self.graph = SceneGraph()
        self.memory: Optional[TaskMemory] = None
        self.metric_inputs = MetricInputs()
        self.traces: list[IterationTrace] = []
        self.iteration = 0
        self.components: dict[str, list] = {}
        self.grasp_offsets: dict[str, np.ndarray] = {}
        self.registration_counts: dict[str, int] = {}
        self.failure_reason = ""

    # -- stage 1 + 2: perception and scene memory -------------------------
    def _subsample(self, pixels: np.ndarray) -> np.ndarray:
        cap = self.cfg.pixels_per_object
        if pixels.shape[0] <= cap:
            return pixels
        stride = int(np.ceil(pixels.shape[0] / cap))
        return pixels[::stride]

    def _perceive(self, obs, gt) -> None:
        seg = request(
            self.backend,
            SegmentationQuery(obs, self.scenario.task_description, ground_truth=gt),
        )
        zone_cfg, env_cfg = self.cfg.zone_cfg, self.cfg.env_cfg
        seen = set()
        for obj in seg.payload:
            pixels = self._subsample(obj.pixels)
            us, vs = pixels[:, 0], pixels[:, 1]
            depths = obs.depth[vs, us]
            valid = depths > 0
            if not valid.any():
                continue
            seen.add(obj.id)
            vertex = self.graph.vertices.get(obj.id)
            if vertex is not None and vertex.state in (
                VertexState.GRASPED,
                VertexState.IN_MANIPULATION,
            ):
                continue  # proprioception owns grasped objects
            try:
                centroid_hint = centroid_to_space(
                    pixels[valid], obs.depth, obs.intrinsics, obs.cam_to_base
                )
            except NoDepthError:
                continue
            points = backproject_pixels(
                us[valid], vs[valid], depths[valid], obs.intrinsics, obs.cam_to_base
            )
            snapped = snap_cloud(points, zone_cfg)
            snapped = np.unique(snapped, axis=0)
            if vertex is None:
                env = GaussianEnvelope.unit(centroid_hint)
                vertex = self.graph.upsert_vertex(obj.id, obj.category, env)
            env = self.graph.envelope_of(obj.id)
            zone = classify_zone(env.mu, zone_cfg)
            env = update_envelope_zoned(env, snapped, zone, centroid_hint, env_cfg)
            self.graph.set_envelope(obj.id, env)
            self.graph.set_feature(obj.id, {"category": obj.category, "zone": zone.value})
            if zone is Zone.NEAR:
                labels = gt.sub_label[vs[valid], us[valid]]
                self.components[obj.id] = voxelize_components(
                    list(zip(points, labels.tolist())), env_cfg.voxel_size
                )
        # Staleness for objects that produced no usable pixels this frame.
        for vid, vertex in self.graph.vertices.items():
            if vid in seen or vertex.state is VertexState.GRASPED:
                continue
            env = self.graph.envelope_of(vid)
            self.graph.set_envelope(
                vid, GaussianEnvelope(env.mu, env.sigma, env.spatial_index, env.stale_frames + 1)
            )

    def _register_sample(self, obs, gt) -> int:
        """Trace a few task-relevant rays through the zone grid (telemetry)."""
        active = self.memory.active() if self.memory else None
        if active is None:
            return 0
        idx = next(
            (i for i, pid in gt.id_map.items() if pid == active.target_object), None
        )
        if idx is None:
            return 0
        vs, us = np.nonzero(gt.instance == idx)
        if us.size == 0:
            return 0
        stride = max(us.size // max(self.cfg.registration_rays, 1), 1)
        count = 0
        for u, v in zip(us[::stride][: self.cfg.registration_rays],
                        vs[::stride][: self.cfg.registration_rays]):
            reg = register_pixel(int(u), int(v), obs, self.cfg.zone_cfg)
            count += len(reg.traversed)
        self.registration_counts[active.target_object] = count
        return count

    def _update_relationships(self) -> None:
        ids = sorted(self.graph.vertices)
        named = [vid for vid in ids if vid in self.scenario.task_description]
        pairs = []
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                d = normalized_distance(self.graph.envelope_of(a), self.graph.envelope_of(b))
                if d <= _CANDIDATE_DISTANCE or (a in named and b in named):
                    pairs.append((a, b))
        if not pairs:
            self.graph.update_edges([], validate=self.cfg.validate_geometry)
            return
        resp = request(
            self.backend,
            RelationshipQuery(tuple(pairs), self.scenario.task_description),
        )
        self.graph.update_edges(resp.payload, validate=self.cfg.validate_geometry)

    def _follow_grasped(self) -> None:
        for vid, offset in self.grasp_offsets.items():
            env = self.graph.envelope_of(vid)
            mu = self.scene.effector_pose.translation + offset
            self.graph.set_envelope(
                vid, GaussianEnvelope(mu, env.sigma, env.spatial_index)
            )

    # -- stage 3: action --------------------------------------------------
    def _record_attempt(self, node, outcome: Outcome, params: dict) -> None:
        category = self.graph.vertices[node.target_object].category \
            if node.target_object in self.graph.vertices else node.target_object
        self.memory.update(
            MotionRecord(
                subtask_id=node.id,
                action_kind=node.action_kind,
                target_category=category,
                parameters=params,
                outcome=outcome,
                timestamp=self.iteration,
            ),
            scene=self.graph.snapshot(),
        )

    def step(self) -> IterationTrace:
        t_start = time.perf_counter()
        self.iteration += 1
        obs, gt = render(self.scene, timestamp=self.iteration)
        trace = IterationTrace(
            iteration=self.iteration,
            mode=None,
            prompt_hash="",
            action="",
            outcome="",
            edge_count=0,
            wall_time=0.0,
        )
        try:
            self._perceive(obs, gt)
            self._register_sample(obs, gt)
            self._follow_grasped()
            self._update_relationships()
        except MalformedResponseError as exc:
            node = self.memory.active()
            if node is not None:
                self._record_attempt(node, Outcome.FAILURE, {"error": str(exc)})
            trace.outcome = f"malformed_response: {exc}"
            trace.wall_time = time.perf_counter() - t_start
            self.traces.append(trace)
            return trace
        trace.edge_count = len(self.graph.edges)

        self.memory.activate_next()
        node = self.memory.active()
        if node is None:
            trace.outcome = "no_active_subtask"
            trace.wall_time = time.perf_counter() - t_start
            self.traces.append(trace)
            return trace

        effector = self.scene.effector_pose.translation
        if node.target_object in self.graph.vertices:
            target_mu = self.graph.envelope_of(node.target_object).mu
        else:
            target_mu = effector + np.array([10.0, 0.0, 0.0])  # unseen: stay coarse
        mode = mode_select(target_mu, effector, self.cfg.effective_tau)
        trace.mode = mode.value
        trace.effector = tuple(round(float(x), 6) for x in effector)
        trace.target_mu = tuple(round(float(x), 6) for x in target_mu)

        snapshot = self.graph.snapshot()
        if mode is Mode.COARSE:
            prompt = build_coarse_prompt(self.memory, snapshot)
        else:
            prompt = build_fine_prompt(
                self.memory,
                snapshot,
                obs,
                effector,
                components=self.components.get(node.target_object, ()),
                voxel_size=self.cfg.env_cfg.voxel_size,
            )
        trace.prompt_hash = hashlib.sha256(prompt.text().encode()).hexdigest()[:16]

        attempt_index = self.memory.statuses[node.id].attempts
        try:
            resp = request(
                self.backend, ActionQuery(prompt, node, attempt_index, mode)
            )
        except MalformedResponseError as exc:
            if mode is Mode.FINE:
                self._record_attempt(node, Outcome.FAILURE, {"error": str(exc)})
            trace.outcome = f"malformed_response: {exc}"
            trace.wall_time = time.perf_counter() - t_start
            self.traces.append(trace)
            return trace

        cmd = resp.payload
        outcome = apply_action(self.scene, cmd)
        success = check_subtask_success(self.scene, node, self.scenario.goals)
        trace.action = cmd.verb
        trace.outcome = "success" if success else ("failure: " + outcome.message)

        if success:
            self._on_subtask_success(node, cmd)
            self._record_attempt(node, Outcome.SUCCESS, dict(cmd.parameters))
        elif mode is Mode.FINE:
            self._record_attempt(node, Outcome.FAILURE, dict(cmd.parameters))
        # Coarse non-completions keep navigating without burning an attempt.

        trace.wall_time = time.perf_counter() - t_start
        self.traces.append(trace)
        return trace

    def _on_subtask_success(self, node, cmd) -> None:
        vid = node.target_object
        if vid not in self.graph.vertices:
            return
        vertex = self.graph.vertices[vid]
        if node.action_kind is ActionKind.GRASP:
            vertex.state = VertexState.GRASPED
            env = self.graph.envelope_of(vid)
            self.grasp_offsets[vid] = env.mu - self.scene.effector_pose.translation
        elif node.action_kind in (ActionKind.RELEASE, ActionKind.PLACE):
            if vertex.state is VertexState.GRASPED:
                vertex.state = VertexState.PLACED
            self.grasp_offsets.pop(vid, None)

    # -- run --------------------------------------------------------------
    def run(self) -> RunReport:
        mi = self.metric_inputs
        mi.task_attempts = 1
        mi.plan_attempts = 1
        try:
            resp = request(self.backend, PlanQuery(self.scenario.task_description))
            if resp.kind is not ResponseKind.PLAN:
                raise InvalidPlanError("backend returned a non-plan response")
            self.memory = init_from_plan(resp.payload, retry_cap=self.cfg.retry_cap)
        except (InvalidPlanError, MalformedResponseError) as exc:
            self.failure_reason = f"planning failed: {exc}"
            return self._finalize()
        mi.plan_successes = 1
        self.memory.activate_next()

        while self.iteration < self.cfg.max_iterations:
            if self.memory.complete():
                break
            if self.memory.failed():
                if not self.cfg.replan_on_failure:
                    self.failure_reason = "subtask retry cap exhausted"
                    break
                self.failure_reason = ""
                for status in self.memory.statuses.values():
                    if status.status is Status.FAILED:
                        status.status = Status.PENDING
                        status.attempts = 0
                self.memory.activate_next()
            self.step()
        if not self.memory.complete() and not self.failure_reason:
            if self.memory.failed():
                self.failure_reason = "subtask retry cap exhausted"
            else:
                self.failure_reason = "iteration budget exhausted"
        return self._finalize()

    def _finalize(self) -> RunReport:
        mi = self.metric_inputs
        if self.memory is not None:
            mi.subtask_attempts = len(self.memory.history)
            mi.subtask_successes = sum(
                1 for r in self.memory.history if r.outcome is Outcome.SUCCESS
            )
            completed = self.memory.complete()
        else:
            completed = False
        mi.task_successes = 1 if completed else 0
        mi.semantic_location_pairs = self._slpc_pairs()
        return RunReport(
            scenario=self.scenario.name,
            seed=self.seed,
            completed=completed,
            success=completed,
            iterations=self.iteration,
            traces=self.traces,
            metric_inputs=mi,
            graph_dump=self.graph.to_dump(),
            memory_dump=self.memory.to_dump() if self.memory else {},
            failure_reason=self.failure_reason,
        )

    def _slpc_pairs(self) -> list:
        pairs = []
        for prim in self.scene.primitives:
            lo, hi = prim.world_aabb(inflate=SLPC_INFLATE)
            vertex = self.graph.vertices.get(prim.id)
            if vertex is None:
                pairs.append(
                    SemanticLocationPair(prim.id, prim.category, tuple(lo), tuple(hi))
                )
                continue
            env = self.graph.envelope_of(prim.id)
            pairs.append(
                SemanticLocationPair(
                    gt_id=prim.id,
                    gt_category=prim.category,
                    box_lo=tuple(lo),
                    box_hi=tuple(hi),
                    predicted_category=vertex.category,
                    predicted_center=tuple(env.mu),
                )
            )
        return pairs


def run(scenario: Scenario, backend, cfg: PlannerConfig, seed: int = 0) -> RunReport:
    """Execute one full task on a scenario with the given backend."""
    return PlannerState(scenario, backend, cfg, seed=seed).run()
