"""Three-zone multi-resolution cubic discretization of the workspace.

The workspace is split into concentric Near/Mid/Far zones around a
configurable origin (the robot base by default). Each zone is quantized
into axis-aligned cubes of a zone-specific edge length, with cube faces at
integer multiples of the edge length from the origin. Boundary points
belong to the higher cube (half-open intervals).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import CameraIntrinsics, Observation, RigidTransform, pixel_ray
from .errors import PixelBoundsError


class Zone(enum.Enum):
    NEAR = "near"
    MID = "mid"
    FAR = "far"


@dataclass(frozen=True)
class ZoneConfig:
    r1: float = 0.3
    r2: float = 1.0
    l1: float = 0.005
    l2: float = 0.02
    l3: float = 0.08
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    max_range: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        if not (0 < self.r1 < self.r2):
            raise ValueError("need 0 < r1 < r2")
        if not (0 < self.l1 < self.l2 < self.l3):
            raise ValueError("need 0 < l1 < l2 < l3")
        if self.l1 > self.r1:
            raise ValueError("near cube edge must fit inside the near zone")

    def edge_for(self, zone: Zone) -> float:
        return {Zone.NEAR: self.l1, Zone.MID: self.l2, Zone.FAR: self.l3}[zone]


@dataclass(frozen=True)
class SpatialElement:
    center: np.ndarray
    edge: float
    zone: Zone
    key: tuple  # (zone, ix, iy, iz); exact identity for dedup

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))


@dataclass(frozen=True)
class PixelRegistration:
    pixel: tuple[int, int]
    traversed: tuple[SpatialElement, ...]
    occupied: Optional[SpatialElement]


def classify_zone(p: np.ndarray, cfg: ZoneConfig) -> Zone:
    d = float(np.linalg.norm(np.asarray(p, dtype=float) - cfg.origin))
    if d < cfg.r1:
        return Zone.NEAR
    if d < cfg.r2:
        return Zone.MID
    return Zone.FAR


def element_of(p: np.ndarray, cfg: ZoneConfig) -> SpatialElement:
    p = np.asarray(p, dtype=float)
    zone = classify_zone(p, cfg)
    edge = cfg.edge_for(zone)
    k = np.floor((p - cfg.origin) / edge).astype(int)
    center = cfg.origin + (k + 0.5) * edge
    return SpatialElement(center, edge, zone, (zone.value, int(k[0]), int(k[1]), int(k[2])))


def snap_cloud(points: np.ndarray, cfg: ZoneConfig) -> np.ndarray:
    """Replace every point by its containing element's center (vectorized)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts.copy()
    rel = pts - cfg.origin
    dist = np.linalg.norm(rel, axis=1)
    edge = np.where(dist < cfg.r1, cfg.l1, np.where(dist < cfg.r2, cfg.l2, cfg.l3))
    k = np.floor(rel / edge[:, None])
    return cfg.origin + (k + 0.5) * edge[:, None]


def _sphere_crossings(o: np.ndarray, d: np.ndarray, center: np.ndarray, radius: float):
    """Positive ray parameters where ||o + t d - center|| == radius."""
    oc = o - center
    b = float(np.dot(oc, d))
    c = float(np.dot(oc, oc)) - radius * radius
    disc = b * b - c  # d is unit
    if disc <= 0:
        return []
    root = float(np.sqrt(disc))
    return [t for t in (-b - root, -b + root) if t > 0]


def _grid_walk(o, d, cfg: ZoneConfig, edge: float, zone: Zone, t_lo, t_hi, out, seen):
    """Amanatides-Woo walk over cubes of one edge length for t in [t_lo, t_hi)."""
    eps = 1e-12
    p = o + (t_lo + eps) * d - cfg.origin
    cell = np.floor(p / edge).astype(int)
    step = np.where(d > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0, edge / np.abs(d), np.inf)
        # Parameter at which the ray leaves the current cell along each axis.
        next_bound = (cell + (step > 0)) * edge
        t_max = np.where(d != 0, (next_bound - (o - cfg.origin)) / d, np.inf)
    t = t_lo
    while t < t_hi:
        key = (zone.value, int(cell[0]), int(cell[1]), int(cell[2]))
        if key not in seen:
            seen.add(key)
            center = cfg.origin + (cell + 0.5) * edge
            out.append(SpatialElement(center, edge, zone, key))
        axis = int(np.argmin(t_max))
        t = float(t_max[axis])
        if t >= t_hi:
            break
        cell = cell.copy()
        cell[axis] += step[axis]
        t_max = t_max.copy()
        t_max[axis] += t_delta[axis]


def traverse_ray(
    origin: np.ndarray, direction: np.ndarray, cfg: ZoneConfig, max_range: float
) -> list[SpatialElement]:
    """All spatial elements pierced by the ray for t in (0, max_range].

    The zone (and therefore cube size) can change along the ray; the walk
    restarts at each crossing of the r1/r2 spheres.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    breaks = [0.0, max_range]
    for radius in (cfg.r1, cfg.r2):
        breaks.extend(t for t in _sphere_crossings(o, d, cfg.origin, radius) if t < max_range)
    breaks = sorted(set(breaks))
    out: list[SpatialElement] = []
    seen: set = set()
    for t_lo, t_hi in zip(breaks[:-1], breaks[1:]):
        if t_hi - t_lo < 1e-12:
            continue
        mid = o + 0.5 * (t_lo + t_hi) * d
        zone = classify_zone(mid, cfg)
        _grid_walk(o, d, cfg, cfg.edge_for(zone), zone, t_lo, t_hi, out, seen)
    return out


def register_pixel(
    u: int, v: int, obs: Observation, cfg: ZoneConfig, max_range: Optional[float] = None
) -> PixelRegistration:
    """Trace the viewing ray of one pixel through the zone grid.

    `traversed` lists every element the base-frame ray pierces, ordered by
    entry parameter; `occupied` is the element containing the backprojected
    depth point, absent when the pixel has no valid depth in range.
    """
    intr = obs.intrinsics
    if not intr.contains(u, v):
        raise PixelBoundsError(f"pixel ({u}, {v}) outside image")
    rng = cfg.max_range if max_range is None else max_range
    dir_cam = pixel_ray(u, v, intr)
    origin = obs.cam_to_base.translation
    direction = obs.cam_to_base.rotation @ dir_cam
    traversed = traverse_ray(origin, direction, cfg, rng)
    occupied = None
    depth = float(obs.depth[v, u])
    if depth > 0:
        ray_scale = np.linalg.norm(
            np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
        )
        if depth * ray_scale <= rng:
            from .geometry import backproject_pixel

            point = backproject_pixel(u, v, depth, intr, obs.cam_to_base)
            occupied = element_of(point, cfg)
    return PixelRegistration((u, v), tuple(traversed), occupied)
