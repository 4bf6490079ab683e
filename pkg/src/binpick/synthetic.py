"""Synthetic bin scenes: analytic heightfields and rendered RGB-D frames.

Everything here is deterministic scaffolding for tests, demos, and the CLI:
scenes are unions of simple solids on the bin floor, expressed either as an
analytic top-surface heightfield (for heightmap-level work) or rendered
through a pinhole camera with a z-buffer (for frame-level work).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .heightmap import BinGeometry, Heightmap, grid_shape
from .rgbd import CameraIntrinsics, CameraPose, RgbdFrame

FLOOR_COLOR = (70, 70, 75)


@dataclass(frozen=True)
class Box:
    center_xy: tuple[float, float]  # bin-relative meters
    size_xy: tuple[float, float]
    height: float
    yaw: float = 0.0
    color: tuple[int, int, int] = (200, 60, 40)


@dataclass(frozen=True)
class Dome:
    """Spherical cap sitting on the floor (a hemisphere when height==radius)."""
    center_xy: tuple[float, float]
    radius: float
    color: tuple[int, int, int] = (60, 120, 210)


@dataclass(frozen=True)
class Ramp:
    """Linear slope along +x inside a rectangle, 0 at the low edge."""
    center_xy: tuple[float, float]
    size_xy: tuple[float, float]
    height: float
    color: tuple[int, int, int] = (90, 180, 90)


def surface_height(objects, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic top-surface height at bin-relative (x, y) grids."""
    z = np.zeros(np.broadcast(x, y).shape)
    for obj in objects:
        cx, cy = obj.center_xy
        if isinstance(obj, Box):
            c, s = math.cos(obj.yaw), math.sin(obj.yaw)
            dx = c * (x - cx) + s * (y - cy)
            dy = -s * (x - cx) + c * (y - cy)
            inside = (np.abs(dx) <= obj.size_xy[0] / 2) & (np.abs(dy) <= obj.size_xy[1] / 2)
            z = np.where(inside, np.maximum(z, obj.height), z)
        elif isinstance(obj, Dome):
            d2 = (x - cx) ** 2 + (y - cy) ** 2
            inside = d2 < obj.radius ** 2
            cap = np.sqrt(np.maximum(obj.radius ** 2 - d2, 0.0))
            z = np.where(inside, np.maximum(z, cap), z)
        elif isinstance(obj, Ramp):
            sx, sy = obj.size_xy
            inside = (np.abs(x - cx) <= sx / 2) & (np.abs(y - cy) <= sy / 2)
            t = np.clip((x - (cx - sx / 2)) / sx, 0.0, 1.0)
            z = np.where(inside, np.maximum(z, obj.height * t), z)
        else:
            raise TypeError(f"unknown scene object {type(obj)!r}")
    return z


def surface_color(objects, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Color of the topmost surface at each (x, y)."""
    shape = np.broadcast(x, y).shape
    color = np.empty(shape + (3,), dtype=np.uint8)
    color[:] = FLOOR_COLOR
    best = np.zeros(shape)
    for obj in objects:
        z = surface_height([obj], x, y)
        on_top = z > best
        color[on_top] = obj.color
        best = np.maximum(best, z)
    return color


def analytic_heightmap(objects, bin_geom: BinGeometry,
                       resolution: float = 0.002) -> Heightmap:
    """Heightmap sampled straight from the analytic surface (pixel centers at
    multiples of the resolution, matching build_heightmap's convention)."""
    h, w = grid_shape(bin_geom, resolution)
    x = np.arange(w) * resolution
    y = np.arange(h) * resolution
    xx, yy = np.meshgrid(x, y)
    height = surface_height(objects, xx, yy)
    color = surface_color(objects, xx, yy)
    return Heightmap(color, height, resolution, bin_geom,
                     np.ones((h, w), dtype=bool))


def nadir_camera(bin_geom: BinGeometry, camera_height: float = 0.8,
                 offset_xy: tuple[float, float] = (0.0, 0.0)) -> CameraPose:
    """Camera looking straight down at the bin center (camera x maps to world
    x, camera y to world -y, depth increases downward)."""
    center = bin_geom.origin + np.array([
        bin_geom.x_extent / 2 + offset_xy[0],
        bin_geom.y_extent / 2 + offset_xy[1],
        camera_height])
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return CameraPose(rotation, center)


def look_at_camera(eye, target, up_hint=(0.0, 0.0, 1.0)) -> CameraPose:
    """Camera at `eye` with its optical axis through `target` (right-handed,
    image y growing opposite the up hint)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up_hint, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.column_stack([right, down, forward])
    return CameraPose(rotation, eye)


def default_intrinsics(width: int = 320, height: int = 240,
                       focal: float = 400.0) -> CameraIntrinsics:
    return CameraIntrinsics(focal, focal, width / 2.0, height / 2.0, width, height)


def _wall_points(xx, yy, zz, color_img, step):
    """Vertical wall samples where the surface height jumps between adjacent
    grid cells (the sides of boxes), so tilted cameras see object sides."""
    pts_parts = []
    color_parts = []
    for axis in (0, 1):
        if axis == 0:
            z1, z2 = zz[:-1, :], zz[1:, :]
            xw = xx[:-1, :]
            yw = (yy[:-1, :] + yy[1:, :]) / 2.0
            c1, c2 = color_img[:-1, :], color_img[1:, :]
        else:
            z1, z2 = zz[:, :-1], zz[:, 1:]
            xw = (xx[:, :-1] + xx[:, 1:]) / 2.0
            yw = yy[:, :-1]
            c1, c2 = color_img[:, :-1], color_img[:, 1:]
        lo = np.minimum(z1, z2).reshape(-1)
        hi = np.maximum(z1, z2).reshape(-1)
        top_color = np.where((z1 >= z2).reshape(-1, 1), c1.reshape(-1, 3),
                             c2.reshape(-1, 3))
        counts = np.maximum(np.floor((hi - lo) / step).astype(np.int64), 0)
        counts[hi - lo <= 1.5 * step] = 0
        if not counts.any():
            continue
        sel = counts > 0
        counts = counts[sel]
        total = int(counts.sum())
        ranks = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        z = np.repeat(lo[sel], counts) + (ranks + 0.5) * step
        pts_parts.append(np.column_stack([
            np.repeat(xw.reshape(-1)[sel], counts),
            np.repeat(yw.reshape(-1)[sel], counts), z]))
        color_parts.append(np.repeat(top_color[sel], counts, axis=0))
    if not pts_parts:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8)
    return np.concatenate(pts_parts), np.concatenate(color_parts).astype(np.uint8)


def render_rgbd(objects, bin_geom: BinGeometry, intrinsics: CameraIntrinsics,
                pose: CameraPose, sample_step: float = 0.001,
                drop_mask=None) -> RgbdFrame:
    """Render the scene into an RGB-D frame by z-buffered forward projection.

    The bin surface is sampled on a `sample_step` grid, projected through the
    camera, and the nearest sample wins each pixel. `drop_mask(x, y)` can
    knock out depth samples to simulate sensor dropout (their pixels read 0).
    """
    nx = int(round(bin_geom.x_extent / sample_step)) + 1
    ny = int(round(bin_geom.y_extent / sample_step)) + 1
    x = np.linspace(0.0, bin_geom.x_extent, nx)
    y = np.linspace(0.0, bin_geom.y_extent, ny)
    xx, yy = np.meshgrid(x, y)
    zz = surface_height(objects, xx, yy)
    colors = surface_color(objects, xx, yy).reshape(-1, 3)
    world = np.column_stack([xx.reshape(-1), yy.reshape(-1), zz.reshape(-1)])
    wall_pts, wall_colors = _wall_points(xx, yy, zz,
                                         surface_color(objects, xx, yy),
                                         sample_step)
    world = np.concatenate([world, wall_pts])
    colors = np.concatenate([colors, wall_colors])
    world = world + bin_geom.origin

    dropped = np.zeros(len(world), dtype=bool)
    if drop_mask is not None:
        dropped[: xx.size] = drop_mask(xx.reshape(-1), yy.reshape(-1))

    cam = pose.inverse().apply(world)
    z = cam[:, 2]
    ok = z > 1e-6
    u = np.rint(cam[ok, 0] / z[ok] * intrinsics.fx + intrinsics.cx).astype(np.int64)
    v = np.rint(cam[ok, 1] / z[ok] * intrinsics.fy + intrinsics.cy).astype(np.int64)
    inb = (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    u, v = u[inb], v[inb]
    z_ok = z[ok][inb]
    col_ok = colors[ok][inb]
    drop_ok = dropped[ok][inb]

    h, w = intrinsics.height, intrinsics.width
    depth = np.zeros((h, w))
    color = np.zeros((h, w, 3), dtype=np.uint8)
    color[:] = 0
    # nearest sample wins: sort descending in depth so closer samples overwrite
    order = np.argsort(-z_ok, kind="stable")
    flat = v[order] * w + u[order]
    depth.reshape(-1)[flat] = z_ok[order]
    color.reshape(-1, 3)[flat] = col_ok[order]
    drop_flat = flat[drop_ok[order]]
    depth.reshape(-1)[drop_flat] = 0.0
    return RgbdFrame(color, depth, intrinsics, pose)


def standard_bin(x_extent: float = 0.4, y_extent: float = 0.3,
                 wall_margin: float = 0.05,
                 origin=(0.0, 0.0, 0.0)) -> BinGeometry:
    wall_margin = min(wall_margin, min(x_extent, y_extent) / 4)
    return BinGeometry(np.asarray(origin, dtype=np.float64), x_extent, y_extent,
                       wall_margin)


def random_graspable_scene(rng: np.random.Generator, bin_geom: BinGeometry,
                           n_boxes: int = 2, with_dome: bool = True,
                           with_plate: bool = False) -> list:
    """Seeded clutter: well-separated graspable boxes, optionally a dome and a
    large flat plate (a guaranteed best suction target)."""
    objects = []
    occupied: list[tuple[float, float, float]] = []

    def place(radius: float, tries: int = 80):
        edge = radius + 0.02
        if (bin_geom.x_extent - 2 * edge <= 0 or
                bin_geom.y_extent - 2 * edge <= 0):
            return None  # object does not fit this bin
        for _ in range(tries):
            x = rng.uniform(edge, bin_geom.x_extent - edge)
            y = rng.uniform(edge, bin_geom.y_extent - edge)
            if all(math.hypot(x - ox, y - oy) > radius + orad + 0.025
                   for ox, oy, orad in occupied):
                occupied.append((x, y, radius))
                return x, y
        return None

    for i in range(n_boxes):
        sx = rng.uniform(0.03, 0.05)
        sy = rng.uniform(0.07, 0.11)
        spot = place(max(sx, sy) / 2 + 0.01)
        if spot:
            objects.append(Box(spot, (sx, sy), rng.uniform(0.04, 0.06),
                               yaw=rng.uniform(0.0, math.pi),
                               color=(150 + 10 * i, 70, 160)))
    if with_plate:
        spot = place(0.05)
        if spot:
            objects.append(Box(spot, (0.1, 0.1), rng.uniform(0.015, 0.025),
                               yaw=0.0, color=(220, 210, 80)))
    if with_dome:
        spot = place(0.025)
        if spot:
            objects.append(Dome(spot, rng.uniform(0.02, 0.03)))
    return objects
