"""Camera-calibrated RGB-D handling.

Projection of registered color+depth frames to world-frame point clouds,
PCA surface normals, background subtraction, depth hole filling, and
point-to-point ICP. All functions are pure; clouds and frames are never
mutated in place.

Frame disk layout: ``NNN.color.png`` (8-bit RGB), ``NNN.depth.png``
(16-bit grayscale, millimeters), ``NNN.meta.json`` (intrinsics + pose).
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

MAX_DEPTH_M = 10.0
ORTHONORMAL_TOL = 1e-6


class CalibrationError(ValueError):
    """Raised when frame calibration is inconsistent with the operation."""


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
            raise CalibrationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise CalibrationError("principal point outside image bounds")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise CalibrationError(f"rotation must be 3x3, got {rotation.shape}")
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=ORTHONORMAL_TOL):
        raise CalibrationError("rotation is not orthonormal")
    if not math.isclose(np.linalg.det(rotation), 1.0, abs_tol=ORTHONORMAL_TOL):
        raise CalibrationError("rotation determinant is not +1")
    return rotation


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then self."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class CameraPose(RigidTransform):
    """Camera-to-world transform."""


@dataclass(frozen=True)
class RgbdFrame:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) meters, 0 = missing
    intrinsics: CameraIntrinsics
    pose: CameraPose

    def __post_init__(self):
        color = np.asarray(self.color, dtype=np.uint8)
        depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.intrinsics.height, self.intrinsics.width
        if color.shape != (h, w, 3) or depth.shape != (h, w):
            raise CalibrationError(
                f"image dims {color.shape}/{depth.shape} do not match intrinsics {h}x{w}")
        if depth.min() < 0 or depth.max() >= MAX_DEPTH_M:
            raise CalibrationError("depth values must lie in [0, 10) meters")
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", depth)


@dataclass
class PointCloud:
    """World-frame point cloud with per-point color and provenance.

    `source_pixel` rows are (frame_id, row, col); `view_origins` maps frame
    ids to the corresponding camera centers (used to orient normals).
    Normals are valid only where `normals_valid` is set.
    """

    points: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    normals: np.ndarray | None = None  # (N, 3), zero rows where invalid
    normals_valid: np.ndarray | None = None  # (N,) bool
    source_pixel: np.ndarray | None = None  # (N, 3) int32
    view_origins: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.colors) != len(self.points):
            raise ValueError("points/colors length mismatch")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals_valid is None:
                self.normals_valid = np.ones(len(self.normals), dtype=bool)
            norms = np.linalg.norm(self.normals[self.normals_valid], axis=1)
            if norms.size and np.abs(norms - 1.0).max() > 1e-5:
                raise ValueError("valid normals must be unit length")

    def __len__(self) -> int:
        return len(self.points)

    def select(self, index) -> "PointCloud":
        """Subset cloud by boolean mask or index array."""
        return replace(
            self,
            points=self.points[index],
            colors=self.colors[index],
            normals=None if self.normals is None else self.normals[index],
            normals_valid=None if self.normals_valid is None else self.normals_valid[index],
            source_pixel=None if self.source_pixel is None else self.source_pixel[index],
        )

    def translated(self, offset) -> "PointCloud":
        origins = {k: v + offset for k, v in self.view_origins.items()}
        return replace(self, points=self.points + np.asarray(offset), view_origins=origins)

    def transformed(self, transform: RigidTransform) -> "PointCloud":
        normals = self.normals
        if normals is not None:
            normals = normals @ transform.rotation.T
        origins = {k: transform.apply(v) for k, v in self.view_origins.items()}
        return replace(self, points=transform.apply(self.points), normals=normals,
                       view_origins=origins)


def concat_clouds(clouds: list[PointCloud]) -> PointCloud:
    if not clouds:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8))
    have_normals = all(c.normals is not None for c in clouds)
    have_pixels = all(c.source_pixel is not None for c in clouds)
    origins: dict[int, np.ndarray] = {}
    for c in clouds:
        origins.update(c.view_origins)
    return PointCloud(
        points=np.concatenate([c.points for c in clouds]),
        colors=np.concatenate([c.colors for c in clouds]),
        normals=np.concatenate([c.normals for c in clouds]) if have_normals else None,
        normals_valid=np.concatenate([c.normals_valid for c in clouds]) if have_normals else None,
        source_pixel=np.concatenate([c.source_pixel for c in clouds]) if have_pixels else None,
        view_origins=origins,
    )


def project_to_cloud(frame: RgbdFrame, frame_id: int = 0) -> PointCloud:
    """Back-project every valid-depth pixel to a world-frame 3D point.

    The pixel -> point mapping is surjective onto the cloud and is recorded
    in `source_pixel` as (frame_id, row, col).
    """
    k = frame.intrinsics
    rows, cols = np.nonzero(frame.depth > 0)
    z = frame.depth[rows, cols]
    x = (cols - k.cx) / k.fx * z
    y = (rows - k.cy) / k.fy * z
    cam = np.column_stack([x, y, z])
    points = frame.pose.apply(cam)
    pix = np.column_stack([np.full(len(rows), frame_id), rows, cols]).astype(np.int32)
    return PointCloud(points=points, colors=frame.color[rows, cols],
                      source_pixel=pix,
                      view_origins={frame_id: frame.pose.translation.copy()})


def project_to_pixels(points: np.ndarray, intrinsics: CameraIntrinsics,
                      pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of project_to_cloud: world points -> ((u, v) pixels, depth)."""
    cam = pose.inverse().apply(points)
    z = cam[:, 2]
    u = cam[:, 0] / z * intrinsics.fx + intrinsics.cx
    v = cam[:, 1] / z * intrinsics.fy + intrinsics.cy
    return np.column_stack([u, v]), z


def estimate_normals(cloud: PointCloud, radius: float = 0.01,
                     min_neighbors: int = 3) -> PointCloud:
    """PCA normals from the smallest-eigenvalue eigenvector of each local covariance.

    Neighborhoods are radius searches (the point itself included). Points with
    fewer than `min_neighbors` points in the neighborhood, or with a degenerate
    (collinear) neighborhood, get a zero normal and normals_valid=False; such
    points are later excluded from suction proposals. Normals are flipped to
    face the camera of the point's source frame (+z when no view origin is
    known, matching a bin seen from above).
    """
    if len(cloud) == 0:
        raise ValueError("cannot estimate normals of an empty cloud")
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = cloud.points
    n = len(pts)
    center = pts.mean(axis=0)
    q = pts - center  # conditioning only; covariance is translation invariant

    tree = cKDTree(q)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    i, j = (pairs[:, 0], pairs[:, 1]) if len(pairs) else (np.empty(0, np.intp),) * 2

    counts = np.ones(n, dtype=np.int64)
    np.add.at(counts, i, 1)
    np.add.at(counts, j, 1)

    sums = q.copy()
    prods = q[:, :, None] * q[:, None, :]
    sum_prod = prods.copy()
    for a in range(3):
        sums[:, a] += np.bincount(i, weights=q[j, a], minlength=n)
        sums[:, a] += np.bincount(j, weights=q[i, a], minlength=n)
        for b in range(3):
            sum_prod[:, a, b] += np.bincount(i, weights=prods[j, a, b], minlength=n)
            sum_prod[:, a, b] += np.bincount(j, weights=prods[i, a, b], minlength=n)

    mean = sums / counts[:, None]
    cov = sum_prod / counts[:, None, None] - mean[:, :, None] * mean[:, None, :]
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]

    # Collinear neighborhoods leave the plane fit underdetermined.
    degenerate = eigvals[:, 1] <= 1e-12 * np.maximum(eigvals[:, 2], 1e-300)
    valid = (counts >= min_neighbors) & ~degenerate

    toward = np.zeros_like(pts)
    toward[:, 2] = 1.0
    if cloud.source_pixel is not None and cloud.view_origins:
        for fid, origin in cloud.view_origins.items():
            sel = cloud.source_pixel[:, 0] == fid
            toward[sel] = origin - pts[sel]
    elif len(cloud.view_origins) == 1:
        (origin,) = cloud.view_origins.values()
        toward = origin - pts
    flip = np.einsum("ij,ij->i", normals, toward) < 0
    normals[flip] *= -1.0
    normals[~valid] = 0.0
    return replace(cloud, normals=normals, normals_valid=valid)


def background_subtract(scene: RgbdFrame, empty: RgbdFrame,
                        color_tol: float = 30.0 / 255.0,
                        depth_tol: float = 0.01) -> np.ndarray:
    """Boolean foreground mask: depth changed beyond depth_tol or color moved
    beyond color_tol (Euclidean over [0,1] RGB).

    Depth is compared only where both frames have valid depth; elsewhere the
    color test alone decides.
    """
    if scene.intrinsics != empty.intrinsics:
        raise CalibrationError("scene and empty frames have different intrinsics")
    if not (np.allclose(scene.pose.rotation, empty.pose.rotation, atol=1e-9)
            and np.allclose(scene.pose.translation, empty.pose.translation, atol=1e-9)):
        raise CalibrationError("scene and empty frames have different poses")
    both = (scene.depth > 0) & (empty.depth > 0)
    depth_fg = both & (np.abs(scene.depth - empty.depth) > depth_tol)
    cdiff = scene.color.astype(np.float64) / 255.0 - empty.color.astype(np.float64) / 255.0
    color_fg = np.linalg.norm(cdiff, axis=2) > color_tol
    return depth_fg | color_fg


def fill_depth_holes(frame: RgbdFrame, max_iters: int = 50) -> RgbdFrame:
    """Fill zero-depth pixels by iterative 8-neighbor dilation.

    Each pass assigns every hole that touches at least one valid pixel the
    median of its valid 8-neighbors; passes repeat until no reachable hole
    remains (at most `max_iters`). Valid pixels are never modified, which
    makes the operation idempotent.
    """
    depth = frame.depth.copy()
    if not (depth > 0).any():
        log.warning("fill_depth_holes: frame has no valid depth, returned unchanged")
        return frame
    h, w = depth.shape
    for _ in range(max_iters):
        holes = depth == 0
        if not holes.any():
            break
        padded = np.full((h + 2, w + 2), np.nan)
        padded[1:-1, 1:-1] = np.where(holes, np.nan, depth)
        stack = np.empty((8, h, w))
        idx = 0
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                stack[idx] = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
                idx += 1
        reachable = holes & ~np.isnan(stack).all(axis=0)
        if not reachable.any():
            break
        depth[reachable] = np.nanmedian(stack[:, reachable], axis=0)
    return replace(frame, depth=depth)


def _best_fit_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform src -> dst (Kabsch with reflection guard)."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, cd - rot @ cs)


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    rms: float
    converged: bool
    iterations: int


def icp_register(source: PointCloud, target: PointCloud, max_iters: int = 60,
                 tol: float = 1e-8, init: RigidTransform | None = None) -> IcpResult:
    """Point-to-point ICP mapping `source` onto `target`.

    Iterates nearest-neighbor correspondence and SVD best-fit until the RMS
    residual change drops below `tol`. Correspondences beyond twice the median
    distance are rejected each iteration. Five consecutive RMS increases count
    as divergence: the best-so-far transform is returned with converged=False.
    """
    if len(source) < 10 or len(target) < 10:
        raise ValueError("ICP needs at least 10 points in both clouds")
    src = source.points
    tree = cKDTree(target.points)
    if init is None:
        current = RigidTransform(np.eye(3), target.points.mean(0) - src.mean(0))
    else:
        current = init

    best_rms = np.inf
    best = current
    prev_rms = None
    rise_streak = 0
    iterations = 0
    converged = False
    for iterations in range(1, max_iters + 1):
        moved = current.apply(src)
        dist, idx = tree.query(moved)
        keep = dist <= 2.0 * np.median(dist)
        if keep.sum() < 3:
            break
        rms = float(np.sqrt(np.mean(dist[keep] ** 2)))
        if rms < best_rms:
            best_rms = rms
            best = current
        if prev_rms is not None:
            if abs(prev_rms - rms) < tol:
                converged = True
                break
            rise_streak = rise_streak + 1 if rms > prev_rms else 0
            if rise_streak >= 5:
                log.warning("icp_register: diverging, returning best-so-far transform")
                return IcpResult(best, best_rms, False, iterations)
        prev_rms = rms
        current = _best_fit_transform(src[keep], target.points[idx[keep]])
    else:
        iterations = max_iters

    moved = current.apply(src)
    dist, _ = tree.query(moved)
    rms = float(np.sqrt(np.mean(dist ** 2)))
    if rms <= best_rms:
        best, best_rms = current, rms
    return IcpResult(best, best_rms, converged, iterations)


# --- frame and cloud disk formats ------------------------------------------

def save_frame(directory, index: int, frame: RgbdFrame) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / f"{index:06d}"
    Image.fromarray(frame.color, mode="RGB").save(f"{stem}.color.png")
    mm = np.clip(np.round(frame.depth * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(f"{stem}.depth.png")
    k = frame.intrinsics
    meta = {
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "width": k.width, "height": k.height,
        "rotation": [float(x) for x in frame.pose.rotation.reshape(-1)],
        "translation": [float(x) for x in frame.pose.translation],
    }
    with open(f"{stem}.meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)


def load_frame(directory, index: int | str) -> RgbdFrame:
    directory = Path(directory)
    stem = directory / (f"{index:06d}" if isinstance(index, int) else str(index))
    color_path = Path(f"{stem}.color.png")
    if not color_path.exists():
        raise FileNotFoundError(color_path)
    color = np.asarray(Image.open(color_path).convert("RGB"))
    depth = np.asarray(Image.open(f"{stem}.depth.png")).astype(np.float64) / 1000.0
    with open(f"{stem}.meta.json") as f:
        meta = json.load(f)
    intr = CameraIntrinsics(meta["fx"], meta["fy"], meta["cx"], meta["cy"],
                            meta.get("width", color.shape[1]),
                            meta.get("height", color.shape[0]))
    pose = CameraPose(np.array(meta["rotation"]).reshape(3, 3),
                      np.array(meta["translation"]))
    return RgbdFrame(color, depth, intr, pose)


def list_frames(directory) -> list[str]:
    """Sorted frame stems (e.g. '000000') present in a scene directory."""
    directory = Path(directory)
    stems = [p.name[: -len(".color.png")] for p in directory.glob("*.color.png")]
    stems = [s for s in stems if re.fullmatch(r"\d+", s)]
    return sorted(stems, key=lambda s: (len(s), s))


def save_ply(path, cloud: PointCloud) -> None:
    """ASCII PLY with x,y,z,nx,ny,nz,r,g,b. Invalid normals export as zeros."""
    n = len(cloud)
    normals = cloud.normals if cloud.normals is not None else np.zeros((n, 3))
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {n}\n")
        for prop in ("x", "y", "z", "nx", "ny", "nz"):
            f.write(f"property float {prop}\n")
        for prop in ("red", "green", "blue"):
            f.write(f"property uchar {prop}\n")
        f.write("end_header\n")
        for p, nrm, c in zip(cloud.points, normals, cloud.colors):
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} "
                    f"{nrm[0]:.6f} {nrm[1]:.6f} {nrm[2]:.6f} "
                    f"{c[0]} {c[1]} {c[2]}\n")
