import math
import time

import numpy as np
import pytest

SESSION_START = time.time()

from binpick.rgbd import (CameraIntrinsics, CameraPose, PointCloud, RgbdFrame,
                          RigidTransform)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_intrinsics(width=64, height=48, focal=80.0):
    return CameraIntrinsics(focal, focal, width / 2.0, height / 2.0, width, height)


def identity_pose():
    return CameraPose(np.eye(3), np.zeros(3))


def make_frame(depth, color=None, intrinsics=None, pose=None):
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    if color is None:
        color = np.zeros((h, w, 3), dtype=np.uint8)
    if intrinsics is None:
        intrinsics = CameraIntrinsics(80.0, 80.0, w / 2.0, h / 2.0, w, h)
    return RgbdFrame(color, depth, intrinsics, pose or identity_pose())


def plane_grid_cloud(n=10, step=0.002, z=0.2, origin=(0.0, 0.0)):
    """n x n grid sampled from the plane z=const."""
    xs = origin[0] + np.arange(n) * step
    ys = origin[1] + np.arange(n) * step
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.reshape(-1), yy.reshape(-1),
                           np.full(n * n, float(z))])
    colors = np.full((n * n, 3), 128, dtype=np.uint8)
    return PointCloud(pts, colors, view_origins={0: np.array([0.0, 0.0, 1.0])})


def sphere_cap_cloud(radius=0.05, n=4000, cap_min_z=0.3, seed=7):
    """Near-uniform Fibonacci lattice on the upper cap of a sphere centered at
    the origin (seed jitters the lattice phase only)."""
    golden = (1 + math.sqrt(5)) / 2
    total = int(round(n / (1 - cap_min_z) * 2))  # lattice over the full sphere
    i = np.arange(total)
    z = 1 - 2 * (i + 0.5) / total
    keep = z >= cap_min_z
    z = z[keep]
    r = np.sqrt(np.maximum(1 - z * z, 0.0))
    phi = 2 * math.pi * ((i[keep] / golden + seed * 0.1) % 1.0)
    pts = radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    colors = np.full((len(pts), 3), 200, dtype=np.uint8)
    return PointCloud(pts, colors,
                      view_origins={0: np.array([0.0, 0.0, 10.0 * radius])})


def rotation_about(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def random_rigid_transform(rng, max_angle=math.radians(30), max_translation=0.1):
    axis = rng.standard_normal(3)
    angle = rng.uniform(0.0, max_angle)
    translation = rng.uniform(-max_translation, max_translation, 3)
    return RigidTransform(rotation_about(axis, angle), translation)


def structured_cloud(rng, n=300):
    """Well-conditioned cloud for registration: three separated blobs with
    distinct spreads (no rotational symmetry)."""
    centers = np.array([[0.0, 0.0, 0.0], [0.12, 0.02, 0.01], [0.03, 0.10, 0.05]])
    spreads = np.array([[0.01, 0.02, 0.005], [0.02, 0.005, 0.01], [0.005, 0.01, 0.02]])
    parts = []
    counts = [n // 3, n // 3, n - 2 * (n // 3)]
    for c, s, m in zip(centers, spreads, counts):
        parts.append(c + rng.standard_normal((m, 3)) * s)
    pts = np.concatenate(parts)
    colors = np.full((len(pts), 3), 90, dtype=np.uint8)
    return PointCloud(pts, colors)
