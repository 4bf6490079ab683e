"""Orthographic RGB-height fusion of registered point clouds.

Each heightmap pixel covers one `resolution` x `resolution` vertical column
of the bin (2 mm default) and stores the color and height-from-bottom of the
topmost point that fell into the column. An n-angle rotation set provides the
machinery for angle-parameterized grasp affordances; rotations by exact
multiples of 90 degrees are index permutations, everything else is a 90-degree
permutation composed with a bilinear residual so that axis-aligned symmetries
stay exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .rgbd import PointCloud

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 0.002  # meters per pixel


@dataclass(frozen=True)
class BinGeometry:
    """Axis-aligned bin: `origin` is the world position of the inner corner
    with minimal x, y at floor level. Bins in a general orientation are
    handled by pre-rotating the world frame so the bin aligns with x, y."""

    origin: np.ndarray
    x_extent: float
    y_extent: float
    wall_margin: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        if self.x_extent <= 0 or self.y_extent <= 0:
            raise ValueError("bin extents must be positive")
        if not (0 < self.wall_margin < min(self.x_extent, self.y_extent) / 2):
            raise ValueError("wall_margin must lie in (0, min extent / 2)")


@dataclass
class Heightmap:
    color: np.ndarray       # (H, W, 3) uint8
    height: np.ndarray      # (H, W) meters from bin floor
    resolution: float
    bin: BinGeometry
    known_mask: np.ndarray  # (H, W) bool, False where no point was observed

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=np.uint8)
        self.height = np.asarray(self.height, dtype=np.float64)
        self.known_mask = np.asarray(self.known_mask, dtype=bool)
        if self.height.shape != self.known_mask.shape or self.color.shape[:2] != self.height.shape:
            raise ValueError("heightmap channel shapes disagree")
        if self.height.size and self.height.min() < 0:
            raise ValueError("heights must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height.shape


@dataclass(frozen=True)
class RotationSet:
    """Evenly spaced gripper angles in [0, pi); grasps are symmetric under
    180-degree rotation so the upper half circle is redundant."""

    n: int = 16

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n) * (math.pi / self.n)


def grid_shape(bin_geom: BinGeometry, resolution: float) -> tuple[int, int]:
    return (math.ceil(bin_geom.y_extent / resolution),
            math.ceil(bin_geom.x_extent / resolution))


def build_heightmap(clouds: list[PointCloud], bin_geom: BinGeometry,
                    resolution: float = DEFAULT_RESOLUTION) -> Heightmap:
    """Fuse world-frame clouds into a top-down heightmap.

    Points snap to the nearest pixel center (pixel (r, c) is centered at
    origin + (c*res, r*res)); each pixel keeps the maximum height in its
    column and the color of that topmost point. Ties in height break on
    color so the result is independent of point and cloud ordering.
    """
    h, w = grid_shape(bin_geom, resolution)
    color = np.zeros((h, w, 3), dtype=np.uint8)
    height = np.zeros((h, w), dtype=np.float64)
    known = np.zeros((h, w), dtype=bool)

    pts = [c.points for c in clouds if len(c)]
    if not pts:
        log.warning("build_heightmap: no input points, heightmap is empty")
        return Heightmap(color, height, resolution, bin_geom, known)
    points = np.concatenate(pts)
    colors = np.concatenate([c.colors for c in clouds if len(c)])

    rel = points - bin_geom.origin
    cols = np.rint(rel[:, 0] / resolution).astype(np.int64)
    rows = np.rint(rel[:, 1] / resolution).astype(np.int64)
    z = np.maximum(rel[:, 2], 0.0)
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    # out-of-bin points scatter into a trash slot instead of being filtered out
    flat = np.where(inside, rows * w + cols, h * w)
    if not inside.any():
        log.warning("build_heightmap: all points fall outside the bin")
        return Heightmap(color, height, resolution, bin_geom, known)

    top = np.full(h * w + 1, -1.0)
    np.maximum.at(top, flat, z)
    # ties in height break on packed color, keeping the result order-invariant
    rgb = (colors[:, 0].astype(np.uint32) << np.uint32(16)
           | colors[:, 1].astype(np.uint32) << np.uint32(8)
           | colors[:, 2].astype(np.uint32))
    winners = z == top[flat]
    top_rgb = np.zeros(h * w + 1, dtype=np.uint32)
    np.maximum.at(top_rgb, flat[winners], rgb[winners])

    known = (top[: h * w] >= 0.0).reshape(h, w)
    height = np.where(known, top[: h * w].reshape(h, w), 0.0)
    packed = top_rgb[: h * w].reshape(h, w)
    color = np.stack([(packed >> np.uint32(16)) & np.uint32(0xFF),
                      (packed >> np.uint32(8)) & np.uint32(0xFF),
                      packed & np.uint32(0xFF)], axis=2).astype(np.uint8)
    return Heightmap(color, height, resolution, bin_geom, known)


def fill_missing_heights(hm: Heightmap, foreground: np.ndarray | None = None,
                         synthetic_height: float = 0.03) -> Heightmap:
    """Give unobserved foreground pixels a synthetic 3 cm height.

    Depth sensors drop out on dark or specular objects; those columns are
    foreground but have no points, so they are hallucinated at a plausible
    object height before grasp analysis. Unobserved background stays at 0.
    With `foreground=None` every unknown pixel is treated as foreground.
    """
    missing = ~hm.known_mask
    if foreground is not None:
        missing = missing & np.asarray(foreground, dtype=bool)
    height = hm.height.copy()
    height[missing] = synthetic_height
    return replace(hm, height=height)


def heightmap_foreground(hm: Heightmap, empty: Heightmap | None = None,
                         height_tol: float = 0.005,
                         color_tol: float = 30.0 / 255.0) -> np.ndarray:
    """Foreground mask on the heightmap grid by subtraction against an empty
    bin heightmap (or against the bare floor when none is given)."""
    if empty is None:
        return hm.height > height_tol
    if empty.shape != hm.shape:
        raise ValueError("empty heightmap shape mismatch")
    height_fg = np.abs(hm.height - empty.height) > height_tol
    cdiff = hm.color.astype(np.float64) / 255.0 - empty.color.astype(np.float64) / 255.0
    color_fg = np.linalg.norm(cdiff, axis=2) > color_tol
    return height_fg | color_fg


# --- rotation machinery ------------------------------------------------------

QUARTER = math.pi / 2.0
_AXIS_TOL = 1e-12


def _split_quarter_turns(angle: float) -> tuple[int, float]:
    """Decompose angle = k * 90deg + residual with residual in [0, 90deg)."""
    angle = float(angle) % (2.0 * math.pi)
    k = int(math.floor(angle / QUARTER + _AXIS_TOL))
    residual = angle - k * QUARTER
    if residual < _AXIS_TOL or QUARTER - residual < _AXIS_TOL:
        if QUARTER - residual < _AXIS_TOL:
            k += 1
        residual = 0.0
    return k % 4, residual


def _rot90_content(arr: np.ndarray, k: int) -> np.ndarray:
    # +90deg of content in (x=col, y=row) coordinates is np.rot90 with k=-1.
    return np.rot90(arr, -k) if k % 4 else arr


def _residual_canvas(shape: tuple[int, int], residual: float) -> tuple[int, int]:
    h, w = shape
    c, s = math.cos(residual), math.sin(residual)
    out_w = math.ceil(w * abs(c) + h * abs(s))
    out_h = math.ceil(w * abs(s) + h * abs(c))
    out_w += (out_w - w) % 2  # even growth keeps center crops symmetric
    out_h += (out_h - h) % 2
    return out_h, out_w


def _bilinear_rotate(arr: np.ndarray, residual: float, out_shape: tuple[int, int],
                     fill: float, nearest: bool = False) -> np.ndarray:
    """Rotate content by `residual` about the image center onto out_shape."""
    h, w = arr.shape[:2]
    oh, ow = out_shape
    c, s = math.cos(residual), math.sin(residual)
    rr, cc = np.meshgrid(np.arange(oh, dtype=np.float64),
                         np.arange(ow, dtype=np.float64), indexing="ij")
    dy = rr - (oh - 1) / 2.0
    dx = cc - (ow - 1) / 2.0
    # inverse map: source position of each output pixel
    sx = c * dx + s * dy + (w - 1) / 2.0
    sy = c * dy - s * dx + (h - 1) / 2.0

    if nearest:
        ri = np.rint(sy).astype(np.int64)
        ci = np.rint(sx).astype(np.int64)
        inb = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        out = np.full(out_shape + arr.shape[2:], fill, dtype=arr.dtype)
        out[inb] = arr[ri[inb], ci[inb]]
        return out

    r0 = np.floor(sy).astype(np.int64)
    c0 = np.floor(sx).astype(np.int64)
    fr = sy - r0
    fc = sx - c0
    vals = np.zeros(out_shape + arr.shape[2:], dtype=np.float64)
    weights = np.zeros(out_shape, dtype=np.float64)
    for dr_, dc_, wgt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                          (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        ri = r0 + dr_
        ci = c0 + dc_
        inb = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        wv = np.where(inb, wgt, 0.0)
        sample = np.full(out_shape + arr.shape[2:], fill, dtype=np.float64)
        sample[inb] = arr[ri[inb], ci[inb]]
        if arr.ndim == 3:
            vals += wv[..., None] * sample
        else:
            vals += wv * sample
        weights += wv
    if arr.ndim == 3:
        vals += (1.0 - weights)[..., None] * fill
    else:
        vals += (1.0 - weights) * fill
    return vals


def rotate_image(arr: np.ndarray, angle: float, fill: float = 0.0,
                 nearest: bool = False, out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Rotate image content by `angle` (CCW in x=col, y=row coordinates).

    Exact 90-degree multiples are pure index permutations. Other angles are
    decomposed into quarter turns plus a bilinear (or nearest) residual; the
    output canvas grows to contain the rotated input unless out_shape pins it.
    """
    k, residual = _split_quarter_turns(angle)
    arr = _rot90_content(arr, k)
    if residual == 0.0:
        if out_shape is not None and out_shape != arr.shape[:2]:
            return _crop_or_pad(arr, out_shape, fill)
        return arr.copy()
    shape = out_shape if out_shape is not None else _residual_canvas(arr.shape[:2], residual)
    return _bilinear_rotate(arr, residual, shape, fill, nearest=nearest)


def _crop_or_pad(arr: np.ndarray, out_shape: tuple[int, int], fill) -> np.ndarray:
    h, w = arr.shape[:2]
    oh, ow = out_shape
    out = np.full(out_shape + arr.shape[2:], fill, dtype=arr.dtype)
    src_r = max(0, (h - oh) // 2)
    src_c = max(0, (w - ow) // 2)
    dst_r = max(0, (oh - h) // 2)
    dst_c = max(0, (ow - w) // 2)
    rows = min(h, oh)
    cols = min(w, ow)
    out[dst_r:dst_r + rows, dst_c:dst_c + cols] = arr[src_r:src_r + rows, src_c:src_c + cols]
    return out


def rotate_heightmap(hm: Heightmap, angle: float) -> Heightmap:
    """Rotate a heightmap about its center.

    Color and height interpolate bilinearly, the known mask uses nearest
    neighbor; padding introduced by the larger canvas is height-0 background.
    """
    if not 0.0 <= angle < 2.0 * math.pi:
        angle = float(angle) % (2.0 * math.pi)
    height = rotate_image(hm.height, angle, fill=0.0)
    color = rotate_image(hm.color.astype(np.float64), angle, fill=0.0)
    known = rotate_image(hm.known_mask, angle, fill=False, nearest=True)
    return Heightmap(np.clip(np.rint(color), 0, 255).astype(np.uint8),
                     np.maximum(height, 0.0), hm.resolution, hm.bin, known)


def center_crop(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Center crop back to `shape` (inverse of the rotation canvas padding)."""
    return _crop_or_pad(arr, shape, 0)


def pixel_to_world(hm: Heightmap, row: int, col: int) -> np.ndarray:
    """World position of the column center at (row, col), z at the surface."""
    h, w = hm.shape
    if not (0 <= row < h and 0 <= col < w):
        raise IndexError(f"pixel ({row}, {col}) outside {h}x{w} heightmap")
    return hm.bin.origin + np.array([col * hm.resolution, row * hm.resolution,
                                     hm.height[row, col]])


def world_to_pixel(hm: Heightmap, xy) -> tuple[int, int]:
    """Nearest pixel index for a world x, y position."""
    rel = np.asarray(xy, dtype=np.float64)[:2] - hm.bin.origin[:2]
    col = int(np.rint(rel[0] / hm.resolution))
    row = int(np.rint(rel[1] / hm.resolution))
    return row, col
