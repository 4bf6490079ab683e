"""Storage-system state tracking.

New objects are localized by differencing consecutive RGB-D frames, their
pose estimated by ICP against a model cloud, and kept in a per-object record
with an amodal axis-aligned box and the height of whatever supports them.
Target-directed picking reweights grasp proposals toward a tracked object.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .heightmap import Heightmap, world_to_pixel
from .rgbd import (PointCloud, RgbdFrame, RigidTransform, background_subtract,
                   icp_register, project_to_cloud)

log = logging.getLogger(__name__)

_CONNECT8 = np.ones((3, 3), dtype=int)


@dataclass
class TrackedObject:
    object_id: str
    pose: RigidTransform
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    placed_time: float = 0.0
    support_surface_height: float = 0.0
    confident: bool = True

    def __post_init__(self):
        self.aabb_min = np.asarray(self.aabb_min, dtype=np.float64).reshape(3)
        self.aabb_max = np.asarray(self.aabb_max, dtype=np.float64).reshape(3)
        if (self.aabb_min > self.aabb_max).any():
            raise ValueError("aabb min must not exceed max")


@dataclass
class StorageState:
    objects: list[TrackedObject] = field(default_factory=list)
    last_frames: list[RgbdFrame] = field(default_factory=list)

    def get(self, object_id: str) -> TrackedObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no tracked object {object_id!r}")

    def __contains__(self, object_id: str) -> bool:
        return any(o.object_id == object_id for o in self.objects)


@dataclass
class DiffResult:
    cloud: PointCloud
    component_count: int
    changed: bool


def diff_localize(before: RgbdFrame, after: RgbdFrame,
                  color_tol: float = 30.0 / 255.0,
                  depth_tol: float = 0.01) -> DiffResult:
    """Point cloud of surfaces that appeared between two frames.

    Runs background subtraction with `before` as the empty reference and
    projects the changed pixels; only the largest connected component is
    returned (objects are placed one at a time, anything else is noise or a
    protocol violation and gets a warning).
    """
    mask = background_subtract(after, before, color_tol, depth_tol)
    mask &= after.depth > 0
    if not mask.any():
        return DiffResult(PointCloud(np.zeros((0, 3)), np.zeros((0, 3), np.uint8)),
                          0, changed=False)
    labels, n_components = ndimage.label(mask, structure=_CONNECT8)
    if n_components > 1:
        log.warning("diff_localize: %d changed regions, keeping the largest",
                    n_components)
        sizes = np.bincount(labels.reshape(-1))[1:]
        mask = labels == (int(np.argmax(sizes)) + 1)
    cloud = project_to_cloud(after)
    keep = mask[cloud.source_pixel[:, 1], cloud.source_pixel[:, 2]]
    return DiffResult(cloud.select(keep), int(n_components), changed=True)


def register_object(state: StorageState, object_id: str, model_cloud: PointCloud,
                    new_surfaces: PointCloud, placed_time: float = 0.0,
                    pre_heightmap: Heightmap | None = None,
                    max_iters: int = 60, tol: float = 1e-8) -> TrackedObject:
    """Estimate the pose of a newly placed object and append it to the state.

    ICP aligns the model cloud to the observed surfaces starting from the
    centroid offset; if ICP diverges the object is stored with the
    centroid-only pose and flagged unconfident. The support height is read
    from the pre-placement heightmap under the object footprint when given.
    """
    if object_id in state:
        raise ValueError(f"object {object_id!r} is already tracked")
    if len(new_surfaces) == 0:
        raise ValueError("no observed surfaces to register against")
    if len(model_cloud) < 10:
        raise ValueError("model cloud too small for registration")

    init = RigidTransform(np.eye(3),
                          new_surfaces.points.mean(0) - model_cloud.points.mean(0))
    if len(new_surfaces) >= 10:
        result = icp_register(model_cloud, new_surfaces, max_iters=max_iters,
                              tol=tol, init=init)
        pose, confident = result.transform, result.converged
    else:
        pose, confident = init, False
    if not confident:
        pose = init
        log.warning("register_object: ICP did not converge for %r, "
                    "falling back to centroid alignment", object_id)

    placed = pose.apply(model_cloud.points)
    aabb_min = placed.min(axis=0)
    aabb_max = placed.max(axis=0)

    support = 0.0
    if pre_heightmap is not None:
        rows_cols = [world_to_pixel(pre_heightmap, placed[i, :2])
                     for i in range(0, len(placed), max(1, len(placed) // 256))]
        h, w = pre_heightmap.shape
        heights = [pre_heightmap.height[r, c] for r, c in rows_cols
                   if 0 <= r < h and 0 <= c < w]
        if heights:
            support = float(max(heights))

    obj = TrackedObject(object_id, pose, aabb_min, aabb_max,
                        placed_time=placed_time,
                        support_surface_height=support, confident=confident)
    state.objects.append(obj)
    return obj


def estimate_grasped_bbox(views: list[RgbdFrame], empty_views: list[RgbdFrame],
                          region_masks: list[np.ndarray] | None = None,
                          color_tol: float = 30.0 / 255.0,
                          depth_tol: float = 0.01) -> np.ndarray:
    """Axis-aligned dimensions of a held object from gripper-facing views.

    Each view is background-subtracted against the matching empty-gripper
    view (optionally restricted to a gripper region mask); the union of the
    foreground clouds gives a tight box in the frame the views are
    registered in. Raises when nothing but background is visible.
    """
    if not views or len(views) != len(empty_views):
        raise ValueError("need matching held/empty view pairs")
    clouds = []
    for i, (view, empty) in enumerate(zip(views, empty_views)):
        mask = background_subtract(view, empty, color_tol, depth_tol)
        if region_masks is not None:
            mask &= np.asarray(region_masks[i], dtype=bool)
        mask &= view.depth > 0
        if not mask.any():
            continue
        cloud = project_to_cloud(view, frame_id=i)
        keep = mask[cloud.source_pixel[:, 1], cloud.source_pixel[:, 2]]
        clouds.append(cloud.select(keep))
    points = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
    if len(points) == 0:
        raise ValueError("no foreground points: is the gripper empty?")
    return points.max(axis=0) - points.min(axis=0)


def prioritize_for_target(proposals: list, state: StorageState, target_id: str,
                          decay_scale: float = 0.05) -> list:
    """Reweight proposals toward the target object's footprint.

    Proposals above the target's box keep their affordance; others decay by
    exp(-distance/decay_scale) with distance measured in the xy plane to the
    footprint rectangle. The reweighted list is re-sorted descending; equal
    scores keep their relative input order.
    """
    target = state.get(target_id)
    lo, hi = target.aabb_min, target.aabb_max
    out = []
    for prop in proposals:
        pos = prop.point if hasattr(prop, "point") else prop.midpoint
        dx = max(lo[0] - pos[0], 0.0, pos[0] - hi[0])
        dy = max(lo[1] - pos[1], 0.0, pos[1] - hi[1])
        dist = math.hypot(dx, dy)
        scale = 1.0 if dist == 0.0 else math.exp(-dist / decay_scale)
        out.append(replace(prop, affordance=prop.affordance * scale))
    out.sort(key=lambda p: -p.affordance)
    return out
