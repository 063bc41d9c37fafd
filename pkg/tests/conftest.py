"""Shared fixtures: cameras, transforms, and small deterministic scenes."""

import numpy as np
import pytest

from provlm.geometry import CameraIntrinsics, RigidTransform


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_rigid(rng: np.random.Generator) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.normal(scale=0.5, size=3))


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def small_intr():
    return CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)


@pytest.fixture
def identity():
    return RigidTransform.identity()


@pytest.fixture
def down_pose():
    """Effector looking straight down the -z world axis."""
    return RigidTransform(
        np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
        np.array([0.45, 0.0, 0.55]),
    )
