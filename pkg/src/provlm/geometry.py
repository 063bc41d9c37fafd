"""Pinhole camera model, rigid transforms, and pixel backprojection.

Conventions:
  - Camera frame: x right, y down, z forward along the optical axis.
  - Depth maps store z-depth along the optical axis in meters; 0 marks an
    invalid measurement.
  - Image coordinates: u is the column, v is the row, origin at top-left.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    InvalidDepthError,
    InvalidTransformError,
    NoDepthError,
    PixelBoundsError,
)

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image bounds")

    def k_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        if not np.allclose(rot.T @ rot, np.eye(3), atol=_ORTHO_TOL):
            raise InvalidTransformError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise InvalidTransformError("rotation determinant is not +1")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat


@dataclass(frozen=True)
class Observation:
    """One RGB-D frame with its calibration and extrinsic chain."""

    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    cam_to_base: RigidTransform
    timestamp: int = 0

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape:
            raise ValueError("rgb and depth dimensions differ")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ValueError("depth must be finite and non-negative")


def compose_extrinsics(
    base_to_ee: RigidTransform, ee_to_cam: RigidTransform
) -> RigidTransform:
    """Chain the end-effector and camera-mount transforms into cam->base."""
    rot = base_to_ee.rotation @ ee_to_cam.rotation
    trans = base_to_ee.rotation @ ee_to_cam.translation + base_to_ee.translation
    return RigidTransform(rot, trans)


def backproject_pixel(
    u: float,
    v: float,
    d: float,
    intr: CameraIntrinsics,
    cam_to_base: RigidTransform,
) -> np.ndarray:
    """Lift pixel (u, v) at z-depth d to a 3D point in the base frame."""
    if d <= 0:
        raise InvalidDepthError(f"depth must be positive, got {d}")
    if not intr.contains(u, v):
        raise PixelBoundsError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height}")
    p_cam = np.array(
        [d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d]
    )
    return cam_to_base.apply(p_cam)


def project_point(
    p_base: np.ndarray, intr: CameraIntrinsics, cam_to_base: RigidTransform
) -> tuple[float, float, float]:
    """Inverse of backproject_pixel: base-frame point to (u, v, z-depth)."""
    p_cam = cam_to_base.inverse().apply(np.asarray(p_base, dtype=float))
    z = p_cam[2]
    if z <= 0:
        raise InvalidDepthError("point is behind the camera")
    u = intr.fx * p_cam[0] / z + intr.cx
    v = intr.fy * p_cam[1] / z + intr.cy
    return u, v, z


def pixel_ray(u: float, v: float, intr: CameraIntrinsics) -> np.ndarray:
    """Unit direction of the viewing ray through (u, v), camera frame."""
    if not intr.contains(u, v):
        raise PixelBoundsError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height}")
    ray = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    return ray / np.linalg.norm(ray)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def centroid_to_space(
    pixels: Iterable[tuple[int, int]],
    depth: np.ndarray,
    intr: CameraIntrinsics,
    cam_to_base: RigidTransform,
) -> np.ndarray:
    """Backproject the (rounded) centroid pixel of a pixel set.

    Falls back to the closest set pixel with valid depth when the centroid
    pixel itself has none.
    """
    pix = np.asarray(list(pixels), dtype=float)
    if pix.size == 0:
        raise ValueError("pixel set is empty")
    cu = _round_half_up(pix[:, 0].mean())
    cv = _round_half_up(pix[:, 1].mean())
    if intr.contains(cu, cv) and depth[cv, cu] > 0:
        return backproject_pixel(cu, cv, float(depth[cv, cu]), intr, cam_to_base)
    # Nearest set pixel (in pixel distance) that carries depth.
    us = pix[:, 0].astype(int)
    vs = pix[:, 1].astype(int)
    valid = depth[vs, us] > 0
    if not np.any(valid):
        raise NoDepthError("no pixel in the set has valid depth")
    dist2 = (us - cu) ** 2 + (vs - cv) ** 2
    dist2 = np.where(valid, dist2, np.iinfo(np.int64).max)
    k = int(np.argmin(dist2))
    return backproject_pixel(
        int(us[k]), int(vs[k]), float(depth[vs[k], us[k]]), intr, cam_to_base
    )


def backproject_pixels(
    us: np.ndarray,
    vs: np.ndarray,
    depths: np.ndarray,
    intr: CameraIntrinsics,
    cam_to_base: RigidTransform,
) -> np.ndarray:
    """Vectorized backprojection; callers must pass only valid depths."""
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    depths = np.asarray(depths, dtype=float)
    pts_cam = np.stack(
        [
            depths * (us - intr.cx) / intr.fx,
            depths * (vs - intr.cy) / intr.fy,
            depths,
        ],
        axis=-1,
    )
    return cam_to_base.apply(pts_cam)


def load_calibration(path) -> tuple[CameraIntrinsics, RigidTransform]:
    """Read a calibration JSON file: intrinsics plus ee->cam mount."""
    with open(path) as fh:
        doc = json.load(fh)
    intr = CameraIntrinsics(
        fx=doc["fx"], fy=doc["fy"], cx=doc["cx"], cy=doc["cy"],
        width=doc["width"], height=doc["height"],
    )
    mount = doc["ee_to_cam"]
    ee_to_cam = RigidTransform(
        np.asarray(mount["rotation"], dtype=float).reshape(3, 3),
        np.asarray(mount["translation"], dtype=float),
    )
    return intr, ee_to_cam
