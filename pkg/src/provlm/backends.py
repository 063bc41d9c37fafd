"""Interchangeable VLM backends.

ScriptedBackend answers every query deterministically from simulator ground
truth (with optional seeded noise and fault injection), standing in for a
live multimodal model. HttpBackend forwards prompts to a real endpoint and
is never exercised by the acceptance suite.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BackendUnavailableError, ConfigError
from .scenario import Scenario
from .scene_graph import band_of
from .sim import Box, Cylinder, SimScene, Sphere
from .vlm import (
    ActionQuery,
    Mode,
    PlanQuery,
    RelationshipQuery,
    SegmentationQuery,
)

_BAND_RELATION = {0: "containing", 1: "contact", 2: "nearby", 3: "separate"}
_RELATIONS = tuple(_BAND_RELATION.values())


@dataclass(frozen=True)
class NoiseConfig:
    """Seeded perturbations applied by the scripted backend."""

    seg_dilate_max: int = 0        # max dilation/erosion radius in pixels
    label_swap_prob: float = 0.0   # per-object category swap probability
    relation_noise_prob: float = 0.0
    action_fail_prob: float = 0.0
    fail_first_n_fine: int = 0     # fail the first N fine attempts per subtask


def _pair_rng(seed: int, *tokens) -> np.random.Generator:
    digest = hashlib.sha256(("|".join(str(t) for t in tokens) + f"|{seed}").encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def shape_envelope_sigma(shape) -> np.ndarray:
    """Shape matrix of the minimum-volume ellipsoid around a primitive."""
    if isinstance(shape, Box):
        return 3.0 * np.diag(shape.halfextents**2)
    if isinstance(shape, Sphere):
        return shape.radius**2 * np.eye(3)
    if isinstance(shape, Cylinder):
        return np.diag(
            [1.5 * shape.radius**2, 1.5 * shape.radius**2, 3.0 * shape.halfheight**2]
        )
    raise ConfigError(f"unsupported shape {type(shape).__name__}")


def true_relation(scene: SimScene, src: str, dst: str) -> str:
    """Relation implied by the distance bands on ground-truth envelopes."""
    pa, pb = scene.primitive(src), scene.primitive(dst)
    sa = pa.pose.rotation @ shape_envelope_sigma(pa.shape) @ pa.pose.rotation.T
    sb = pb.pose.rotation @ shape_envelope_sigma(pb.shape) @ pb.pose.rotation.T
    lam = float(np.linalg.eigvalsh(sa + sb)[-1])
    d = float(np.linalg.norm(pa.pose.translation - pb.pose.translation)) / np.sqrt(max(lam, 1e-12))
    return _BAND_RELATION[band_of(d)]


class ScriptedBackend:
    """Deterministic oracle backend over one scenario's ground truth."""

    def __init__(
        self,
        scenario: Scenario,
        scene: SimScene,
        noise: NoiseConfig = NoiseConfig(),
        seed: int = 0,
    ):
        self.scenario = scenario
        self.scene = scene
        self.noise = noise
        self.seed = seed

    # Every answer is serialized to canonical JSON bytes so determinism can
    # be asserted on the wire format itself.
    def handle(self, query) -> bytes:
        if isinstance(query, SegmentationQuery):
            doc = self._segmentation(query)
        elif isinstance(query, RelationshipQuery):
            doc = self._relationships(query)
        elif isinstance(query, PlanQuery):
            doc = self._plan(query)
        elif isinstance(query, ActionQuery):
            doc = self._action(query)
        else:
            raise ConfigError(f"unsupported query type {type(query).__name__}")
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    # -- segmentation -----------------------------------------------------
    def _segmentation(self, query: SegmentationQuery) -> dict:
        gt = query.ground_truth
        if gt is None:
            raise ConfigError("scripted segmentation needs the ground-truth frame")
        objects = []
        categories = {p.id: p.category for p in self.scene.primitives}
        for idx in sorted(gt.id_map):
            mask = gt.instance == idx
            pid = gt.id_map[idx]
            if self.noise.seg_dilate_max > 0:
                rng = _pair_rng(self.seed, "seg", pid, query.obs.timestamp)
                radius = int(rng.integers(-self.noise.seg_dilate_max, self.noise.seg_dilate_max + 1))
                if radius != 0:
                    from scipy import ndimage

                    op = ndimage.binary_dilation if radius > 0 else ndimage.binary_erosion
                    mask = op(mask, iterations=abs(radius))
            if not mask.any():
                continue
            category = categories[pid]
            if self.noise.label_swap_prob > 0:
                rng = _pair_rng(self.seed, "label", pid)
                if rng.random() < self.noise.label_swap_prob:
                    others = sorted(set(categories.values()) - {category})
                    if others:
                        category = others[int(rng.integers(len(others)))]
            vs, us = np.nonzero(mask)
            objects.append(
                {
                    "id": pid,
                    "category": category,
                    "pixels": np.stack([us, vs], axis=1).tolist(),
                }
            )
        return {"kind": "segmentation", "objects": objects}

    # -- relationships ----------------------------------------------------
    def _relationships(self, query: RelationshipQuery) -> dict:
        assertions = []
        known = {p.id for p in self.scene.primitives}
        for src, dst in query.pairs:
            if src not in known or dst not in known:
                continue
            rel = true_relation(self.scene, src, dst)
            if self.noise.relation_noise_prob > 0:
                rng = _pair_rng(self.seed, "rel", *sorted((src, dst)))
                if rng.random() < self.noise.relation_noise_prob:
                    others = [r for r in _RELATIONS if r != rel]
                    rel = others[int(rng.integers(len(others)))]
            assertions.append({"src": src, "dst": dst, "rel_type": rel, "constraints": {}})
        return {"kind": "relationships", "assertions": assertions}

    # -- planning ---------------------------------------------------------
    def _plan(self, query: PlanQuery) -> dict:
        return {
            "kind": "plan",
            "subtasks": [
                {
                    "id": node.id,
                    "description": node.description,
                    "action_kind": node.action_kind.value,
                    "target_object": node.target_object,
                    "depends_on": list(node.depends_on),
                }
                for node in self.scenario.plan
            ],
        }

    # -- actions ----------------------------------------------------------
    def _inject_failure(self, query: ActionQuery) -> bool:
        if query.mode is not Mode.FINE:
            return False
        if query.attempt_index < self.noise.fail_first_n_fine:
            return True
        if self.noise.action_fail_prob > 0:
            rng = _pair_rng(self.seed, "fail", query.subtask.id, query.attempt_index)
            if rng.random() < self.noise.action_fail_prob:
                return True
        return False

    def _action(self, query: ActionQuery) -> dict:
        if self._inject_failure(query):
            # Hold position: a harmless motion that leaves the goal unmet.
            here = self.scene.effector_pose.translation
            return {"kind": "action", "verb": "MoveTo", "target": here.tolist(),
                    "parameters": {"injected": True}}
        script = self.scenario.scripts.get(query.subtask.id)
        if not script:
            raise ConfigError(f"no script for subtask {query.subtask.id!r}")
        verb = script["verb"]
        if verb == "MoveTo":
            return {"kind": "action", "verb": "MoveTo",
                    "target": [float(x) for x in script["position"]], "parameters": {}}
        if verb == "Grasp":
            return {"kind": "action", "verb": "Grasp", "target": query.subtask.target_object,
                    "parameters": {}}
        if verb == "Release":
            return {"kind": "action", "verb": "Release", "parameters": {}}
        if verb == "InsertAlong":
            axis = np.asarray(script["axis"], dtype=float)
            axis = axis / np.linalg.norm(axis)
            goal = self.scenario.goals[query.subtask.id]
            if goal.get("type") != "object_at":
                raise ConfigError("InsertAlong script needs an object_at goal")
            prim = self.scene.primitive(goal["object"])
            travel = float(np.dot(np.asarray(goal["position"]) - prim.pose.translation, axis))
            return {
                "kind": "action",
                "verb": "InsertAlong",
                "parameters": {"axis": axis.tolist(), "distance": max(travel, 0.0)},
            }
        if verb == "Retreat":
            return {"kind": "action", "verb": "Retreat",
                    "parameters": {k: v for k, v in script.items() if k != "verb"}}
        raise ConfigError(f"unsupported scripted verb {verb!r}")


class HttpBackend:
    """Thin JSON-over-HTTP client for a live multimodal endpoint."""

    def __init__(
        self,
        endpoint: Optional[str] = None,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        retries: int = 3,
    ):
        self.endpoint = endpoint or os.environ.get("VLM_ENDPOINT")
        self.model = model or os.environ.get("VLM_MODEL", "")
        self.api_key = api_key or os.environ.get("VLM_API_KEY", "")
        self.timeout = timeout
        self.retries = retries
        if not self.endpoint:
            raise ConfigError("no endpoint configured (set VLM_ENDPOINT)")

    def _encode_query(self, query) -> dict:
        if isinstance(query, ActionQuery):
            return {
                "type": "action",
                "mode": query.mode.value,
                "prompt": query.prompt.text(),
                "images": [img.decode("ascii") if isinstance(img, bytes) else img
                           for img in (query.prompt.images or ())],
            }
        if isinstance(query, SegmentationQuery):
            return {
                "type": "segmentation",
                "task": query.task_description,
                "image": self._encode_rgb(query.obs.rgb),
            }
        if isinstance(query, RelationshipQuery):
            return {"type": "relationships", "task": query.task_description,
                    "pairs": [list(p) for p in query.pairs]}
        if isinstance(query, PlanQuery):
            return {"type": "plan", "task": query.task_description}
        raise ConfigError(f"unsupported query type {type(query).__name__}")

    @staticmethod
    def _encode_rgb(rgb) -> str:
        import base64
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(rgb).save(buf, format="PNG")
        return base64.b64encode(buf.getvalue()).decode("ascii")

    def handle(self, query) -> bytes:
        import requests

        body = {"model": self.model, "query": self._encode_query(query)}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for _ in range(self.retries):
            try:
                resp = requests.post(
                    self.endpoint, json=body, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                return resp.content
            except requests.RequestException as exc:
                last = exc
        raise BackendUnavailableError(f"backend unreachable after {self.retries} tries: {last}")
