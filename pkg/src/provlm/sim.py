"""Synthetic RGB-D world: primitive shapes, ray-cast rendering, actions.

Kinematic and quasi-static: the end-effector is a pose-controlled point
with a virtual gripper, contact is a geometric overlap test at millimeter
resolution, and there is no gravity or friction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError
from .geometry import CameraIntrinsics, Observation, RigidTransform, compose_extrinsics
from .task_memory import ActionKind, SubtaskNode

_STEP = 0.001        # path / overlap resolution, meters
_GRASP_RANGE = 0.010


# -- shapes ---------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    halfextents: np.ndarray

    def __post_init__(self):
        he = np.asarray(self.halfextents, dtype=float).reshape(3)
        object.__setattr__(self, "halfextents", he)
        if np.any(he <= 1e-4):
            raise ValueError("degenerate box")

    def ray_t(self, o, d):
        he = self.halfextents
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(d != 0, 1.0 / d, np.inf)
        t1 = (-he - o) * inv
        t2 = (he - o) * inv
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        # Rays starting inside a slab with zero direction along that axis.
        inside_slab = (np.abs(o) <= he) | (d != 0)
        ok = (tmax >= tmin) & (tmax > 0) & inside_slab.all(axis=1)
        t = np.where(tmin > 0, tmin, tmax)
        return np.where(ok, t, np.inf)

    def contains(self, p, margin=0.0):
        return np.all(np.abs(p) <= self.halfextents + margin, axis=-1)

    def distance(self, p):
        q = np.abs(np.asarray(p, dtype=float)) - self.halfextents
        outside = np.linalg.norm(np.maximum(q, 0.0))
        inside = min(float(q.max()), 0.0)
        return outside + inside

    def local_aabb(self):
        return -self.halfextents, self.halfextents

    def surface_samples(self, spacing=_STEP):
        hx, hy, hz = self.halfextents
        xs = np.arange(-hx, hx + spacing / 2, spacing)
        ys = np.arange(-hy, hy + spacing / 2, spacing)
        zs = np.arange(-hz, hz + spacing / 2, spacing)
        faces = []
        gy, gz = np.meshgrid(ys, zs, indexing="ij")
        for sx in (-hx, hx):
            faces.append(np.stack([np.full(gy.size, sx), gy.ravel(), gz.ravel()], axis=1))
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        for sy in (-hy, hy):
            faces.append(np.stack([gx.ravel(), np.full(gx.size, sy), gz.ravel()], axis=1))
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        for sz in (-hz, hz):
            faces.append(np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, sz)], axis=1))
        return np.concatenate(faces, axis=0)


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if self.radius <= 1e-4:
            raise ValueError("degenerate sphere")

    def ray_t(self, o, d):
        a = np.einsum("ij,ij->i", d, d)
        b = np.einsum("ij,ij->i", o, d)
        c = np.einsum("ij,ij->i", o, o) - self.radius**2
        disc = b * b - a * c
        ok = disc >= 0
        root = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - root) / a
        t1 = (-b + root) / a
        t = np.where(t0 > 0, t0, t1)
        return np.where(ok & (t > 0), t, np.inf)

    def contains(self, p, margin=0.0):
        return np.linalg.norm(p, axis=-1) <= self.radius + margin

    def distance(self, p):
        return float(np.linalg.norm(p)) - self.radius

    def local_aabb(self):
        r = np.full(3, self.radius)
        return -r, r

    def surface_samples(self, spacing=_STEP):
        n = max(int(np.ceil(4 * np.pi * self.radius**2 / spacing**2)), 64)
        # Fibonacci sphere: near-uniform deterministic coverage.
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        theta = np.pi * (1 + 5**0.5) * i
        return self.radius * np.stack(
            [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1
        )


@dataclass(frozen=True)
class Cylinder:
    radius: float
    halfheight: float

    def __post_init__(self):
        if self.radius <= 1e-4 or self.halfheight <= 1e-4:
            raise ValueError("degenerate cylinder")

    def ray_t(self, o, d):
        n = o.shape[0]
        ts = np.full(n, np.inf)
        # Lateral surface.
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - self.radius**2
        disc = b * b - a * c
        ok = (disc >= 0) & (a > 1e-18)
        root = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            for sign in (-1.0, 1.0):
                t = np.where(ok, (-b + sign * root) / a, np.inf)
                z = o[:, 2] + t * d[:, 2]
                hit = ok & (t > 0) & (np.abs(z) <= self.halfheight)
                ts = np.where(hit & (t < ts), t, ts)
            # Caps.
            for zcap in (-self.halfheight, self.halfheight):
                t = np.where(d[:, 2] != 0, (zcap - o[:, 2]) / d[:, 2], np.inf)
                x = o[:, 0] + t * d[:, 0]
                y = o[:, 1] + t * d[:, 1]
                hit = (t > 0) & (x * x + y * y <= self.radius**2)
                ts = np.where(hit & (t < ts), t, ts)
        return ts

    def contains(self, p, margin=0.0):
        p = np.atleast_2d(p)
        radial = np.linalg.norm(p[..., :2], axis=-1) <= self.radius + margin
        axial = np.abs(p[..., 2]) <= self.halfheight + margin
        return radial & axial

    def distance(self, p):
        radial = float(np.linalg.norm(p[:2])) - self.radius
        axial = abs(float(p[2])) - self.halfheight
        if radial <= 0 and axial <= 0:
            return max(radial, axial)
        return float(np.hypot(max(radial, 0.0), max(axial, 0.0)))

    def local_aabb(self):
        r = np.array([self.radius, self.radius, self.halfheight])
        return -r, r

    def surface_samples(self, spacing=_STEP):
        pts = []
        n_theta = max(int(np.ceil(2 * np.pi * self.radius / spacing)), 16)
        theta = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
        zs = np.arange(-self.halfheight, self.halfheight + spacing / 2, spacing)
        gt, gz = np.meshgrid(theta, zs, indexing="ij")
        pts.append(
            np.stack(
                [self.radius * np.cos(gt).ravel(), self.radius * np.sin(gt).ravel(), gz.ravel()],
                axis=1,
            )
        )
        rs = np.arange(spacing, self.radius, spacing)
        for zcap in (-self.halfheight, self.halfheight):
            ring = [np.array([[0.0, 0.0, zcap]])]
            for r in rs:
                m = max(int(np.ceil(2 * np.pi * r / spacing)), 8)
                th = np.linspace(0, 2 * np.pi, m, endpoint=False)
                ring.append(np.stack([r * np.cos(th), r * np.sin(th), np.full(m, zcap)], axis=1))
            pts.append(np.concatenate(ring, axis=0))
        return np.concatenate(pts, axis=0)


Shape = Union[Box, Sphere, Cylinder]


@dataclass(frozen=True)
class SubComponent:
    label: int
    shape: Shape
    local_pose: RigidTransform


@dataclass
class Primitive:
    id: str
    shape: Shape
    pose: RigidTransform
    category: str
    graspable: bool = False
    sub_components: tuple = ()

    def parts(self):
        """(shape, world pose, sub label) triples; the render/collision body.

        Primitives with sub-components are the union of those parts; the
        main shape then only documents the overall footprint.
        """
        if self.sub_components:
            return [
                (sc.shape, compose_extrinsics(self.pose, sc.local_pose), sc.label)
                for sc in self.sub_components
            ]
        return [(self.shape, self.pose, 0)]

    def world_aabb(self, inflate: float = 0.0):
        los, his = [], []
        for shape, pose, _ in self.parts():
            lo, hi = shape.local_aabb()
            corners = np.array(
                [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
            )
            world = pose.apply(corners)
            los.append(world.min(axis=0))
            his.append(world.max(axis=0))
        return np.min(los, axis=0) - inflate, np.max(his, axis=0) + inflate

    def surface_samples_world(self, spacing=_STEP):
        return np.concatenate(
            [pose.apply(shape.surface_samples(spacing)) for shape, pose, _ in self.parts()],
            axis=0,
        )

    def distance_to(self, point: np.ndarray) -> float:
        return min(
            shape.distance(pose.inverse().apply(point)) for shape, pose, _ in self.parts()
        )


@dataclass(frozen=True)
class GroundTruthFrame:
    depth: np.ndarray
    instance: np.ndarray
    sub_label: np.ndarray
    id_map: dict  # instance index -> primitive id


@dataclass
class ActionOutcome:
    success: bool
    verb: str
    message: str = ""
    contact_point: Optional[np.ndarray] = None
    effector_pose: Optional[RigidTransform] = None


@dataclass
class SimScene:
    primitives: list
    effector_pose: RigidTransform
    camera_mount: RigidTransform
    intrinsics: CameraIntrinsics
    rng_seed: int = 0
    grasped: Optional[str] = None
    _grasp_rel: Optional[np.ndarray] = None

    def __post_init__(self):
        ids = [p.id for p in self.primitives]
        if len(set(ids)) != len(ids):
            raise ValueError("primitive ids must be unique")

    def primitive(self, pid: str) -> Primitive:
        for prim in self.primitives:
            if prim.id == pid:
                return prim
        raise KeyError(pid)

    def camera_pose(self) -> RigidTransform:
        return compose_extrinsics(self.effector_pose, self.camera_mount)


def _category_color(category: str) -> np.ndarray:
    digest = hashlib.md5(category.encode()).digest()
    rgb = np.frombuffer(digest[:3], dtype=np.uint8).astype(float)
    return (64 + rgb * (191 / 255)).astype(np.uint8)  # keep off pure black


def render(scene: SimScene, timestamp: int = 0) -> tuple[Observation, GroundTruthFrame]:
    """Per-pixel nearest ray hit with flat per-category shading."""
    intr = scene.intrinsics
    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us, dtype=float)],
        axis=-1,
    ).reshape(-1, 3)
    cam = scene.camera_pose()

    depth = np.full(h * w, np.inf)
    instance = np.zeros(h * w, dtype=np.int32)
    sub_label = np.zeros(h * w, dtype=np.int32)
    id_map: dict[int, str] = {}

    for idx, prim in enumerate(scene.primitives, start=1):
        id_map[idx] = prim.id
        for shape, pose, label in prim.parts():
            inv = pose.inverse()
            o = np.broadcast_to(inv.apply(cam.translation), dirs_cam.shape)
            d = dirs_cam @ (inv.rotation @ cam.rotation).T
            t = shape.ray_t(np.ascontiguousarray(o), d)
            closer = t < depth
            depth = np.where(closer, t, depth)
            instance = np.where(closer, idx, instance)
            sub_label = np.where(closer, label, sub_label)

    hit = np.isfinite(depth)
    depth = np.where(hit, depth, 0.0).reshape(h, w)
    instance = instance.reshape(h, w)
    sub_label = sub_label.reshape(h, w)

    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for idx, prim in enumerate(scene.primitives, start=1):
        rgb[instance == idx] = _category_color(prim.category)

    obs = Observation(rgb=rgb, depth=depth, intrinsics=intr, cam_to_base=cam, timestamp=timestamp)
    gt = GroundTruthFrame(depth=depth, instance=instance, sub_label=sub_label, id_map=id_map)
    return obs, gt


# -- action execution -----------------------------------------------------

def _point_in_any(scene: SimScene, points: np.ndarray, exclude: set) -> np.ndarray:
    """Row mask: point inside some primitive not in `exclude`."""
    inside = np.zeros(points.shape[0], dtype=bool)
    for prim in scene.primitives:
        if prim.id in exclude:
            continue
        for shape, pose, _ in prim.parts():
            local = pose.inverse().apply(points)
            inside |= np.asarray(shape.contains(local)).reshape(-1)
    return inside


def _sweep_collides(scene: SimScene, start: np.ndarray, delta: np.ndarray):
    """Step the effector (and grasped body) along delta at 1 mm resolution.

    Returns (reached_fraction, contact_point or None): the fraction of the
    motion completed before the first colliding step.
    """
    length = float(np.linalg.norm(delta))
    n_steps = max(int(np.ceil(length / _STEP)), 1)
    fractions = np.linspace(0.0, 1.0, n_steps + 1)[1:]
    step_points = start + np.outer(fractions, delta)
    exclude = {scene.grasped} if scene.grasped else set()

    eff_hit = _point_in_any(scene, step_points, exclude)
    first_bad = int(np.argmax(eff_hit)) if eff_hit.any() else n_steps
    contact = step_points[first_bad] if first_bad < n_steps else None

    if scene.grasped is not None:
        prim = scene.primitive(scene.grasped)
        samples_world = prim.surface_samples_world(_STEP)
        # Test (step, sample) pairs in chunks to bound memory; stop at the
        # first colliding step since later ones cannot matter.
        chunk = max(1, int(2e6 // max(samples_world.shape[0], 1)))
        for lo in range(0, min(first_bad + 1, n_steps), chunk):
            hi = min(lo + chunk, n_steps)
            offs = np.outer(fractions[lo:hi], delta)
            pts = (samples_world[None, :, :] + offs[:, None, :]).reshape(-1, 3)
            mask = _point_in_any(scene, pts, exclude).reshape(hi - lo, -1)
            rows = mask.any(axis=1)
            if rows.any():
                row = int(np.argmax(rows))
                if lo + row < first_bad:
                    first_bad = lo + row
                    contact = pts.reshape(hi - lo, -1, 3)[row][mask[row]][0]
                break

    if first_bad < n_steps:
        return (float(fractions[first_bad - 1]) if first_bad > 0 else 0.0, contact)
    return 1.0, None


def _translate_effector(scene: SimScene, delta: np.ndarray) -> None:
    pose = scene.effector_pose
    scene.effector_pose = RigidTransform(pose.rotation, pose.translation + delta)
    if scene.grasped is not None:
        prim = scene.primitive(scene.grasped)
        prim.pose = RigidTransform(
            prim.pose.rotation, scene.effector_pose.translation + scene._grasp_rel
        )


def apply_action(scene: SimScene, cmd) -> ActionOutcome:
    """Execute one action command against the scene (mutates it)."""
    verb = cmd.verb
    if verb == "MoveTo":
        target = np.asarray(cmd.target, dtype=float).reshape(3)
        start = scene.effector_pose.translation
        delta = target - start
        frac, contact = _sweep_collides(scene, start, delta)
        _translate_effector(scene, frac * delta)
        if frac < 1.0:
            return ActionOutcome(
                False, verb, "collision en route", contact, scene.effector_pose
            )
        return ActionOutcome(True, verb, "reached goal", None, scene.effector_pose)

    if verb == "Grasp":
        if scene.grasped is not None:
            return ActionOutcome(False, verb, "gripper already holding an object")
        eff = scene.effector_pose.translation
        best, best_dist = None, np.inf
        for prim in scene.primitives:
            if not prim.graspable:
                continue
            dist = max(prim.distance_to(eff), 0.0)
            if dist < best_dist:
                best, best_dist = prim, dist
        if best is None or best_dist > _GRASP_RANGE:
            return ActionOutcome(False, verb, f"nothing graspable within {_GRASP_RANGE} m")
        scene.grasped = best.id
        scene._grasp_rel = best.pose.translation - eff
        return ActionOutcome(True, verb, f"attached {best.id}")

    if verb == "Release":
        if scene.grasped is None:
            return ActionOutcome(False, verb, "nothing grasped")
        released = scene.grasped
        scene.grasped = None
        scene._grasp_rel = None
        return ActionOutcome(True, verb, f"released {released}")

    if verb == "InsertAlong":
        if scene.grasped is None:
            return ActionOutcome(False, verb, "no grasped object to insert")
        axis = np.asarray(cmd.parameters["axis"], dtype=float).reshape(3)
        axis = axis / np.linalg.norm(axis)
        distance = float(cmd.parameters["distance"])
        delta = axis * distance
        frac, contact = _sweep_collides(scene, scene.effector_pose.translation, delta)
        _translate_effector(scene, frac * delta)
        if frac < 1.0:
            return ActionOutcome(
                False, verb, "contact before target depth", contact, scene.effector_pose
            )
        return ActionOutcome(True, verb, "insertion travel complete", None, scene.effector_pose)

    if verb == "Retreat":
        axis = np.asarray(cmd.parameters.get("axis", [0, 0, 1]), dtype=float).reshape(3)
        axis = axis / np.linalg.norm(axis)
        distance = float(cmd.parameters.get("distance", 0.05))
        start = scene.effector_pose.translation
        frac, contact = _sweep_collides(scene, start, axis * distance)
        _translate_effector(scene, frac * axis * distance)
        if frac < 1.0:
            return ActionOutcome(False, verb, "collision while retreating", contact)
        return ActionOutcome(True, verb, "retreated")

    return ActionOutcome(False, verb, f"unknown verb {verb!r}")


def check_goal(scene: SimScene, goal: dict) -> bool:
    """Evaluate one declarative subtask goal against the scene."""
    kind = goal.get("type")
    if kind == "effector_at":
        pos = np.asarray(goal["position"], dtype=float)
        return float(np.linalg.norm(scene.effector_pose.translation - pos)) <= goal["tolerance"]
    if kind == "attached":
        return scene.grasped == goal["object"]
    if kind == "detached":
        return scene.grasped is None
    if kind == "object_at":
        prim = scene.primitive(goal["object"])
        pos = np.asarray(goal["position"], dtype=float)
        return float(np.linalg.norm(prim.pose.translation - pos)) <= goal["tolerance"]
    raise ConfigError(f"unknown goal type {kind!r}")


def check_subtask_success(scene: SimScene, subtask: SubtaskNode, goals: dict) -> bool:
    goal = goals.get(subtask.id)
    if goal is None:
        raise ConfigError(f"no goal declared for subtask {subtask.id!r}")
    return check_goal(scene, goal)
