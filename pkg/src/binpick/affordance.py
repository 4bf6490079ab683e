"""Dense affordance maps per grasping primitive and their conversion into
executable pick proposals.

Two producers exist: the heuristic baselines (surface-normal variance for
suction, hill-profile detection for parallel-jaw grasping) and a loader for
learned per-pixel maps stored as ``.affd`` files. Proposal construction
classifies each candidate into one of the four primitives: suction down (sd),
suction side (ss), grasp down (gd), flush grasp (fg).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .heightmap import BinGeometry, Heightmap, RotationSet, pixel_to_world
from .rgbd import PointCloud


class PrimitiveKind(Enum):
    SUCTION_DOWN = "sd"
    SUCTION_SIDE = "ss"
    GRASP_DOWN = "gd"
    FLUSH_GRASP = "fg"


# canonical ordering used for deterministic tie-breaks
KIND_ORDER = {k: i for i, k in enumerate(
    [PrimitiveKind.SUCTION_DOWN, PrimitiveKind.SUCTION_SIDE,
     PrimitiveKind.GRASP_DOWN, PrimitiveKind.FLUSH_GRASP])}

SUCTION_KIND = 0
GRASP_KIND = 1
_AFFD_MAGIC = b"AFFD"
_AFFD_VERSION = 1


@dataclass
class AffordanceMap:
    values: np.ndarray            # (H, W) in [0, 1]
    kind: str                     # "suction" | "grasp"
    angle: float | None = None    # gripper angle, grasp maps only
    source: str = "baseline"      # "baseline" | "learned-file"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in ("suction", "grasp"):
            raise ValueError(f"unknown affordance kind {self.kind!r}")
        if (self.angle is not None) != (self.kind == "grasp"):
            raise ValueError("angle must be present exactly for grasp maps")
        if not np.isfinite(self.values).all():
            raise ValueError("affordance values must be finite")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("affordance values must lie in [0, 1]")


@dataclass(frozen=True)
class GripperParams:
    """Parallel-jaw geometry used by the hill-profile test.

    finger_width is the clear slot each finger needs beside the object along
    the closing axis; finger_span is the finger's extent perpendicular to it
    (profiles see the max height across that span, and each finger must touch
    the object over at least contact_fraction of it, so a thin diagonal slice
    of an object corner cannot masquerade as a graspable hill);
    finger_clearance is how far the object top must rise above both slots;
    width_clearance is added to the measured object extent when commanding
    the gripper opening.
    """

    max_opening: float = 0.07
    finger_width: float = 0.02
    finger_span: float = 0.02
    finger_clearance: float = 0.015
    width_clearance: float = 0.01
    contact_fraction: float = 0.5


@dataclass(frozen=True)
class SuctionProposal:
    point: np.ndarray
    normal: np.ndarray
    affordance: float
    primitive: PrimitiveKind
    point_index: int
    pixel: tuple[int, int, int] | None = None  # (frame_id, row, col)


@dataclass(frozen=True)
class GraspProposal:
    midpoint: np.ndarray
    angle: float
    width: float
    affordance: float
    primitive: PrimitiveKind
    pixel: tuple[int, int]  # heightmap (row, col)
    angle_index: int


# --- suction baseline --------------------------------------------------------

def suction_baseline(cloud: PointCloud, window_radius: float = 0.01,
                     beta: float = 50.0) -> np.ndarray:
    """Per-point suction affordance from local surface-normal variance.

    The variance is the trace of the covariance of neighbor unit normals,
    which reduces to 1 - |mean normal|^2. Flat regions score exp(0) = 1,
    curved or noisy regions decay exponentially; points without a valid
    normal score 0.
    """
    if cloud.normals is None or cloud.normals_valid is None:
        raise ValueError("suction_baseline requires estimated normals")
    valid = cloud.normals_valid
    out = np.zeros(len(cloud))
    if not valid.any():
        return out
    pts = cloud.points[valid]
    nrm = cloud.normals[valid]
    n = len(pts)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(window_radius, output_type="ndarray")
    counts = np.ones(n)
    sums = nrm.copy()
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        np.add.at(counts, i, 1.0)
        np.add.at(counts, j, 1.0)
        for a in range(3):
            sums[:, a] += np.bincount(i, weights=nrm[j, a], minlength=n)
            sums[:, a] += np.bincount(j, weights=nrm[i, a], minlength=n)
    mean = sums / counts[:, None]
    variance = np.maximum(1.0 - np.einsum("ij,ij->i", mean, mean), 0.0)
    out[valid] = np.exp(-beta * variance)
    return out


# --- grasp baseline ----------------------------------------------------------

def _closing_axis_offsets(angle_index: int, n_angles: int, n_steps: int) -> np.ndarray:
    """Integer (dr, dc) sample offsets for steps 1..n_steps along the closing
    axis of the given angle.

    For even n, offsets of angle i + n/2 are the exact 90-degree rotation of
    the offsets of angle i, so quarter-turn symmetries of the scene permute
    the angle maps without any resampling error.
    """
    if n_angles % 2 == 0 and angle_index >= n_angles // 2:
        base = _closing_axis_offsets(angle_index - n_angles // 2, n_angles, n_steps)
        return np.column_stack([base[:, 1], -base[:, 0]])  # (dr, dc) -> (dc, -dr)
    theta = angle_index * math.pi / n_angles
    s = np.arange(1, n_steps + 1, dtype=np.float64)
    dr = np.rint(s * math.sin(theta)).astype(np.int64)
    dc = np.rint(s * math.cos(theta)).astype(np.int64)
    return np.column_stack([dr, dc])


def _finger_swept_heights(heights: np.ndarray, lat_offsets: np.ndarray,
                          pad: int) -> np.ndarray:
    """Heights dilated by the finger bar: the value at each cell is the max
    over the lateral offsets (the finger only fits where its whole span
    fits). Output is padded by `pad` cells of bin-floor 0 on every side;
    outside the map reads as floor (walls are handled by the flush
    primitive, not by the profile test)."""
    h, w = heights.shape
    lat_pad = int(np.abs(lat_offsets).max()) if len(lat_offsets) else 0
    big = np.zeros((h + 2 * (pad + lat_pad), w + 2 * (pad + lat_pad)))
    big[pad + lat_pad:pad + lat_pad + h, pad + lat_pad:pad + lat_pad + w] = heights
    oh, ow = h + 2 * pad, w + 2 * pad
    swept = big[lat_pad:lat_pad + oh, lat_pad:lat_pad + ow].copy()
    for dr, dc in lat_offsets:
        for sr, sc in ((dr, dc), (-dr, -dc)):
            np.maximum(swept, big[lat_pad + sr:lat_pad + sr + oh,
                                  lat_pad + sc:lat_pad + sc + ow], out=swept)
    return swept


def _side_profile(swept: np.ndarray, raw: np.ndarray, raw_pad: int,
                  threshold: np.ndarray, offsets: np.ndarray, bar: np.ndarray,
                  pad: int, half_steps: int, slot_steps: int):
    """Profile statistics along one closing direction.

    Returns (ok, off, slot_max, contact): `off` is the step count to the
    first swept sample at or below center height - clearance, `slot_max` the
    tallest swept sample in the slot_steps-wide finger slot starting there,
    `contact` the fraction of the finger bar touching raw object surface at
    the contact cell (the last high step), and `ok` False where no edge
    exists within the opening or the slot is obstructed.
    """
    h, w = threshold.shape
    views = [swept[pad + dr:pad + dr + h, pad + dc:pad + dc + w]
             for dr, dc in offsets]
    stack = np.stack(views, axis=2)
    low = stack <= threshold[:, :, None]
    found = low.any(axis=2)
    first = np.argmax(low, axis=2)  # index of first low sample
    off = first + 1
    slot_idx = first[:, :, None] + np.arange(slot_steps)[None, None, :]
    slot_idx = np.minimum(slot_idx, stack.shape[2] - 1)
    slot = np.take_along_axis(stack, slot_idx, axis=2)
    slot_max = slot.max(axis=2)
    ok = found & (off <= half_steps) & (slot_max <= threshold)

    # contact cell: last step before the profile drops (the center pixel
    # itself when the drop is immediate)
    edge = np.maximum(first - 1, 0)
    edge_dr = np.where(first > 0, offsets[:, 0][edge], 0)
    edge_dc = np.where(first > 0, offsets[:, 1][edge], 0)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    touching = np.zeros((h, w))
    for br, bc in bar:
        sample = raw[raw_pad + rr + edge_dr + br, raw_pad + cc + edge_dc + bc]
        touching += sample > threshold
    contact = touching / len(bar)
    return ok, off, slot_max, contact


def grasp_profile_maps(heights: np.ndarray, resolution: float,
                       gripper: GripperParams, angle_index: int,
                       n_angles: int) -> tuple[np.ndarray, np.ndarray]:
    """Score and object-width maps for one closing angle.

    A pixel is graspable when, walking the finger-swept height profile both
    ways along the closing axis, the surface drops by at least
    finger_clearance within half the gripper opening on both sides, a
    finger_width-wide slot at each drop stays below that level, and each
    finger touches the object over at least contact_fraction of its span (a
    proxy for antipodal contact: corner slices fail it). The score in (0, 1]
    combines the spare opening width, the height margin over the slots, the
    contact coverage, and how centered the pixel sits between the two edges.
    """
    half_steps = int(math.floor(gripper.max_opening / (2.0 * resolution)))
    slot_steps = max(1, math.ceil(gripper.finger_width / resolution))
    n_steps = half_steps + slot_steps
    offsets = _closing_axis_offsets(angle_index, n_angles, n_steps)
    lat_steps = int(math.ceil(gripper.finger_span / (2.0 * resolution)))
    lat_offsets = _closing_axis_offsets((angle_index + n_angles // 2) % n_angles,
                                        n_angles, lat_steps)
    bar = np.unique(np.concatenate([lat_offsets, -lat_offsets, [[0, 0]]]), axis=0)

    pad = int(np.abs(offsets).max()) if len(offsets) else 0
    swept = _finger_swept_heights(heights, lat_offsets, pad)
    h, w = heights.shape
    raw_pad = pad + (int(np.abs(bar).max()) if len(bar) else 0)
    raw = np.zeros((h + 2 * raw_pad, w + 2 * raw_pad))
    raw[raw_pad:raw_pad + h, raw_pad:raw_pad + w] = heights

    threshold = heights - gripper.finger_clearance
    ok_f, off_f, slot_f, contact_f = _side_profile(
        swept, raw, raw_pad, threshold, offsets, bar, pad,
        half_steps, slot_steps)
    ok_b, off_b, slot_b, contact_b = _side_profile(
        swept, raw, raw_pad, threshold, -offsets, bar, pad,
        half_steps, slot_steps)

    widths = (off_f + off_b - 1) * resolution
    required = 2.0 * np.maximum(off_f, off_b) * resolution
    contact = np.minimum(contact_f, contact_b)
    feasible = (ok_f & ok_b & (required <= gripper.max_opening)
                & (contact >= gripper.contact_fraction))

    margin = heights - np.maximum(slot_f, slot_b)
    margin_term = np.minimum(margin / (2.0 * gripper.finger_clearance), 1.0)
    width_term = 1.0 - widths / gripper.max_opening
    center_term = np.minimum(off_f, off_b) / np.maximum(off_f, off_b)
    contact_term = (contact_f + contact_b) / 2.0
    score = np.where(
        feasible,
        np.clip(width_term * margin_term * center_term * contact_term, 0.0, 1.0),
        0.0)
    widths = np.where(feasible, widths, 0.0)
    return score, widths


def grasp_baseline(hm: Heightmap, rotations: RotationSet = RotationSet(),
                   gripper: GripperParams = GripperParams()) -> list[AffordanceMap]:
    """Antipodal-grasp affordances by hill detection, one map per angle.

    Expects a filled heightmap (no unknown foreground columns). Each angle's
    map scores top-down grasps whose closing axis makes that angle with the
    heightmap x-axis.
    """
    angles = rotations.angles
    maps = []
    for i in range(rotations.n):
        score, _ = grasp_profile_maps(hm.height, hm.resolution, gripper, i, rotations.n)
        maps.append(AffordanceMap(score, "grasp", angle=float(angles[i]), source="baseline"))
    return maps


# --- learned-map files -------------------------------------------------------

def save_affordance_map(path, amap: AffordanceMap) -> None:
    h, w = amap.values.shape
    kind = SUCTION_KIND if amap.kind == "suction" else GRASP_KIND
    angle = float("nan") if amap.angle is None else float(amap.angle)
    with open(path, "wb") as f:
        f.write(_AFFD_MAGIC)
        f.write(struct.pack("<IIIIf", _AFFD_VERSION, h, w, kind, angle))
        f.write(amap.values.astype("<f4").tobytes())


def load_learned_map(path, expected_shape: tuple[int, int] | None = None) -> AffordanceMap:
    """Read an ``.affd`` map. Dimension mismatches and non-finite values are
    rejected; finite values are clamped to [0, 1]."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _AFFD_MAGIC:
            raise ValueError(f"{path}: not an affordance map file")
        version, h, w, kind, angle = struct.unpack("<IIIIf", f.read(20))
        if version != _AFFD_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if kind not in (SUCTION_KIND, GRASP_KIND):
            raise ValueError(f"{path}: unknown kind {kind}")
        data = np.frombuffer(f.read(4 * h * w), dtype="<f4")
    if data.size != h * w:
        raise ValueError(f"{path}: truncated data")
    if expected_shape is not None and (h, w) != tuple(expected_shape):
        raise ValueError(f"{path}: dims {(h, w)} do not match expected {expected_shape}")
    values = data.reshape(h, w).astype(np.float64)
    if not np.isfinite(values).all():
        raise ValueError(f"{path}: non-finite affordance values")
    values = np.clip(values, 0.0, 1.0)
    if kind == SUCTION_KIND:
        return AffordanceMap(values, "suction", source="learned-file")
    return AffordanceMap(values, "grasp", angle=float(angle), source="learned-file")


# --- proposal construction ---------------------------------------------------

def points_in_foreground(cloud: PointCloud, masks: dict[int, np.ndarray]) -> np.ndarray:
    """Per-point foreground flags looked up through source pixels."""
    if cloud.source_pixel is None:
        raise ValueError("cloud has no source pixels")
    flags = np.zeros(len(cloud), dtype=bool)
    for fid, mask in masks.items():
        sel = cloud.source_pixel[:, 0] == fid
        rows = cloud.source_pixel[sel, 1]
        cols = cloud.source_pixel[sel, 2]
        flags[sel] = np.asarray(mask, dtype=bool)[rows, cols]
    return flags


def make_suction_proposals(cloud: PointCloud, affordances: np.ndarray,
                           foreground: np.ndarray | None = None,
                           down_angle_threshold: float = math.radians(40.0),
                           ) -> list[SuctionProposal]:
    """Turn per-point affordances into ranked suction proposals.

    Background points and points without a valid normal are dropped. Normals
    within `down_angle_threshold` of vertical pick suction-down, the rest
    suction-side. Sorted by affordance descending, ties broken by the lowest
    point index.
    """
    affordances = np.asarray(affordances, dtype=np.float64)
    if len(affordances) != len(cloud):
        raise ValueError("affordances not aligned with cloud")
    keep = np.ones(len(cloud), dtype=bool)
    if cloud.normals_valid is not None:
        keep &= cloud.normals_valid
    if foreground is not None:
        keep &= np.asarray(foreground, dtype=bool)
    idx = np.nonzero(keep)[0]
    if len(idx) == 0:
        return []
    order = np.lexsort((idx, -affordances[idx]))
    idx = idx[order]
    normals = cloud.normals[idx]
    tilt = np.arccos(np.clip(normals[:, 2], -1.0, 1.0))
    proposals = []
    for k, point_index in enumerate(idx):
        kind = (PrimitiveKind.SUCTION_DOWN if tilt[k] <= down_angle_threshold
                else PrimitiveKind.SUCTION_SIDE)
        pix = None
        if cloud.source_pixel is not None:
            pix = tuple(int(v) for v in cloud.source_pixel[point_index])
        proposals.append(SuctionProposal(
            point=cloud.points[point_index].copy(), normal=normals[k].copy(),
            affordance=float(affordances[point_index]), primitive=kind,
            point_index=int(point_index), pixel=pix))
    return proposals


def make_grasp_proposals(hm: Heightmap, maps: list[AffordanceMap],
                         bin_geom: BinGeometry | None = None,
                         gripper: GripperParams = GripperParams(),
                         foreground: np.ndarray | None = None,
                         min_affordance: float = 0.0,
                         limit: int | None = None) -> list[GraspProposal]:
    """Turn per-angle affordance maps into ranked grasp proposals.

    Widths come from the measured object extent along the closing axis (same
    profile as the baseline) plus the configured width clearance; pixels
    within `wall_margin` of a bin wall become flush grasps, everything else
    grasp down. Sorted by affordance descending with (angle index, pixel
    index) tie-breaks.
    """
    bin_geom = bin_geom or hm.bin
    h, w = hm.shape
    res = hm.resolution
    n_angles = len(maps)
    cols = np.arange(w) * res
    rows = np.arange(h) * res
    wall_dist = np.minimum.outer(np.minimum(rows, bin_geom.y_extent - rows),
                                 np.minimum(cols, bin_geom.x_extent - cols))
    near_wall = wall_dist < bin_geom.wall_margin

    aff_parts, angle_idx_parts, pixel_parts, width_parts = [], [], [], []
    angle_of = []
    for ai, amap in enumerate(maps):
        if amap.values.shape != (h, w):
            raise ValueError("affordance map shape does not match heightmap")
        angle_of.append(float(amap.angle))
        _, widths = grasp_profile_maps(hm.height, res, gripper, ai, n_angles)
        cand = (amap.values > min_affordance) & (widths > 0.0)
        if foreground is not None:
            cand &= np.asarray(foreground, dtype=bool)
        rr, cc = np.nonzero(cand)
        aff_parts.append(amap.values[rr, cc])
        width_parts.append(widths[rr, cc])
        pixel_parts.append(rr * w + cc)
        angle_idx_parts.append(np.full(len(rr), ai, dtype=np.int64))
    if not aff_parts:
        return []
    aff = np.concatenate(aff_parts)
    width = np.concatenate(width_parts)
    pix = np.concatenate(pixel_parts)
    ang = np.concatenate(angle_idx_parts)
    order = np.lexsort((pix, ang, -aff))
    if limit is not None:
        order = order[:limit]
    proposals = []
    for k in order:
        r, c = int(pix[k] // w), int(pix[k] % w)
        ai = int(ang[k])
        kind = PrimitiveKind.FLUSH_GRASP if near_wall[r, c] else PrimitiveKind.GRASP_DOWN
        proposals.append(GraspProposal(
            midpoint=pixel_to_world(hm, r, c), angle=angle_of[ai],
            width=float(min(width[k] + gripper.width_clearance, gripper.max_opening)),
            affordance=float(aff[k]), primitive=kind, pixel=(r, c),
            angle_index=ai))
    return proposals
