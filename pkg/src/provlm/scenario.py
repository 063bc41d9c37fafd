"""Declarative scenario files: world layout, subtask plan, goals, scripts.

A scenario JSON document (version 1) describes the primitives, the camera
and effector start poses, the canonical subtask plan with per-subtask goal
predicates, and the action script the deterministic backend replays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import CameraIntrinsics, RigidTransform
from .sim import Box, Cylinder, Primitive, SimScene, Sphere, SubComponent
from .task_memory import ActionKind, SubtaskNode

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    name: str
    task_description: str
    intrinsics: CameraIntrinsics
    camera_mount: RigidTransform
    effector_start: RigidTransform
    primitives: tuple
    plan: tuple          # SubtaskNode, canonical execution order
    goals: dict          # subtask id -> goal predicate dict
    scripts: dict        # subtask id -> scripted action dict
    zones: dict = field(default_factory=dict)
    seed: int = 0

    def build_scene(self) -> SimScene:
        """Fresh mutable world instance for one run."""
        prims = [
            Primitive(
                id=p.id,
                shape=p.shape,
                pose=p.pose,
                category=p.category,
                graspable=p.graspable,
                sub_components=p.sub_components,
            )
            for p in self.primitives
        ]
        return SimScene(
            primitives=prims,
            effector_pose=self.effector_start,
            camera_mount=self.camera_mount,
            intrinsics=self.intrinsics,
            rng_seed=self.seed,
        )


def _transform(doc: dict) -> RigidTransform:
    return RigidTransform(
        np.asarray(doc.get("rotation", np.eye(3).reshape(-1).tolist()), dtype=float).reshape(3, 3),
        np.asarray(doc.get("translation", [0, 0, 0]), dtype=float),
    )


def _shape(doc: dict):
    kind = doc.get("type")
    if kind == "box":
        return Box(np.asarray(doc["halfextents"], dtype=float))
    if kind == "sphere":
        return Sphere(float(doc["radius"]))
    if kind == "cylinder":
        return Cylinder(float(doc["radius"]), float(doc["halfheight"]))
    raise ConfigError(f"unknown shape type {kind!r}")


def _primitive(doc: dict) -> Primitive:
    subs = tuple(
        SubComponent(int(s["label"]), _shape(s["shape"]), _transform(s.get("pose", {})))
        for s in doc.get("sub_components", ())
    )
    return Primitive(
        id=doc["id"],
        shape=_shape(doc["shape"]),
        pose=_transform(doc["pose"]),
        category=doc["category"],
        graspable=bool(doc.get("graspable", False)),
        sub_components=subs,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    if doc.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario version {doc.get('version')!r}")
    try:
        intr_doc = doc["intrinsics"]
        intrinsics = CameraIntrinsics(
            fx=intr_doc["fx"], fy=intr_doc["fy"], cx=intr_doc["cx"], cy=intr_doc["cy"],
            width=intr_doc["width"], height=intr_doc["height"],
        )
        primitives = tuple(_primitive(p) for p in doc["primitives"])
        plan, goals, scripts = [], {}, {}
        for entry in doc["plan"]:
            node = SubtaskNode(
                id=entry["id"],
                description=entry.get("description", ""),
                action_kind=ActionKind(entry["action_kind"]),
                target_object=entry["target_object"],
                depends_on=tuple(entry.get("depends_on", ())),
            )
            plan.append(node)
            goals[node.id] = dict(entry["goal"])
            scripts[node.id] = dict(entry.get("script", {}))
        return Scenario(
            name=doc.get("name", path.stem),
            task_description=doc["task_description"],
            intrinsics=intrinsics,
            camera_mount=_transform(doc.get("camera_mount", {})),
            effector_start=_transform(doc["effector_start"]),
            primitives=primitives,
            plan=tuple(plan),
            goals=goals,
            scripts=scripts,
            zones=dict(doc.get("zones", {})),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid scenario {path}: {exc}") from exc
