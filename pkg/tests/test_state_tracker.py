import math

import numpy as np
import pytest

from binpick.affordance import PrimitiveKind, SuctionProposal
from binpick.rgbd import PointCloud, RigidTransform, project_to_cloud
from binpick.state_tracker import (StorageState, TrackedObject, diff_localize,
                                   estimate_grasped_bbox, prioritize_for_target,
                                   register_object)
from binpick.synthetic import (Box, default_intrinsics, look_at_camera, nadir_camera,
                               render_rgbd, standard_bin)

from conftest import rotation_about, structured_cloud


BIN = standard_bin(0.2, 0.2)
INTR = default_intrinsics(160, 160, focal=320.0)
POSE = nadir_camera(BIN, camera_height=0.5)


def render(objects, step=0.001):
    return render_rgbd(objects, BIN, INTR, POSE, sample_step=step)


# --- diff_localize ----------------------------------------------------------------

def test_diff_identical_frames_empty():
    frame = render([Box((0.1, 0.1), (0.05, 0.05), 0.03)])
    result = diff_localize(frame, frame)
    assert not result.changed
    assert len(result.cloud) == 0


def test_diff_finds_new_box_surface():
    before = render([])
    box = Box((0.10, 0.10), (0.06, 0.04), 0.05)
    after = render([box])
    result = diff_localize(before, after)
    assert result.changed
    assert result.component_count == 1
    pts = result.cloud.points - BIN.origin
    # every returned point lies on the box top (within a pixel of its border)
    assert (pts[:, 2] > 0.045).all()
    assert (np.abs(pts[:, 0] - 0.10) < 0.032).all()
    assert (np.abs(pts[:, 1] - 0.10) < 0.022).all()
    assert len(result.cloud) > 100


def test_diff_two_boxes_keeps_largest():
    before = render([])
    after = render([Box((0.06, 0.06), (0.06, 0.06), 0.05),
                    Box((0.15, 0.15), (0.02, 0.02), 0.05)])
    result = diff_localize(before, after)
    assert result.component_count == 2
    pts = result.cloud.points - BIN.origin
    assert (np.abs(pts[:, 0] - 0.06) < 0.04).all()  # only the big box remains


# --- register_object ----------------------------------------------------------------

def test_register_recovers_synthetic_pose(rng):
    model = structured_cloud(rng, n=400)
    truth = RigidTransform(rotation_about([0, 0, 1], math.radians(12)),
                           np.array([0.35, 0.1, 0.02]))
    surfaces = model.transformed(truth)
    state = StorageState()
    tracked = register_object(state, "boxA", model, surfaces)
    assert tracked.confident
    assert np.linalg.norm(tracked.pose.translation - truth.translation) < 1e-2
    # rotation within 3 degrees
    rot_err = tracked.pose.rotation @ truth.rotation.T
    angle = math.acos(min(1.0, (np.trace(rot_err) - 1) / 2))
    assert angle < math.radians(3)
    assert "boxA" in state


def test_register_duplicate_id_rejected(rng):
    model = structured_cloud(rng)
    state = StorageState()
    register_object(state, "obj", model, model)
    with pytest.raises(ValueError):
        register_object(state, "obj", model, model)


def test_register_empty_surfaces_rejected(rng):
    model = structured_cloud(rng)
    empty = PointCloud(np.zeros((0, 3)), np.zeros((0, 3), np.uint8))
    with pytest.raises(ValueError):
        register_object(StorageState(), "obj", model, empty)


def test_register_leaves_existing_objects_alone(rng):
    model = structured_cloud(rng)
    state = StorageState()
    first = register_object(state, "a", model, model)
    pose_before = first.pose.translation.copy()
    shift = RigidTransform(np.eye(3), np.array([0.3, 0.0, 0.0]))
    register_object(state, "b", model, model.transformed(shift))
    np.testing.assert_array_equal(state.get("a").pose.translation, pose_before)


def test_register_aabb_covers_model(rng):
    model = structured_cloud(rng)
    shift = RigidTransform(np.eye(3), np.array([0.2, -0.1, 0.05]))
    state = StorageState()
    tracked = register_object(state, "a", model, model.transformed(shift))
    placed = tracked.pose.apply(model.points)
    assert (placed.min(0) >= tracked.aabb_min - 1e-9).all()
    assert (placed.max(0) <= tracked.aabb_max + 1e-9).all()


# --- estimate_grasped_bbox ------------------------------------------------------------

def bbox_views(objects):
    """Top-down plus oblique gripper-facing views of the held object."""
    oblique = look_at_camera(BIN.origin + np.array([0.45, 0.1, 0.3]),
                             BIN.origin + np.array([0.10, 0.10, 0.02]))
    views = [render(objects), render_rgbd(objects, BIN, INTR, oblique,
                                          sample_step=0.001)]
    empties = [render([]), render_rgbd([], BIN, INTR, oblique,
                                       sample_step=0.001)]
    return views, empties


def test_grasped_bbox_dims_of_box():
    views, empties = bbox_views([Box((0.10, 0.10), (0.05, 0.04), 0.03)])
    dims = estimate_grasped_bbox(views, empties)
    assert abs(dims[0] - 0.05) < 0.005
    assert abs(dims[1] - 0.04) < 0.005
    assert abs(dims[2] - 0.03) < 0.005


def test_grasped_bbox_empty_gripper_errors():
    empty = render([])
    with pytest.raises(ValueError):
        estimate_grasped_bbox([empty], [empty])


def test_grasped_bbox_rotated_box_matches_analytic():
    yaw = math.radians(45)
    views, empties = bbox_views([Box((0.10, 0.10), (0.05, 0.04), 0.03, yaw=yaw)])
    dims = estimate_grasped_bbox(views, empties)
    expected_x = 0.05 * math.cos(yaw) + 0.04 * math.sin(yaw)
    expected_y = 0.05 * math.sin(yaw) + 0.04 * math.cos(yaw)
    assert abs(dims[0] - expected_x) < 0.005
    assert abs(dims[1] - expected_y) < 0.005


# --- prioritize_for_target --------------------------------------------------------------

def tracked_box():
    return TrackedObject("target", RigidTransform.identity(),
                         np.array([0.0, 0.0, 0.0]), np.array([0.1, 0.1, 0.05]))


def sprop(pos, aff):
    return SuctionProposal(np.asarray(pos, float), np.array([0.0, 0.0, 1.0]),
                           aff, PrimitiveKind.SUCTION_DOWN, 0)


def test_prioritize_above_target_unscaled():
    state = StorageState(objects=[tracked_box()])
    props = prioritize_for_target([sprop([0.05, 0.05, 0.2], 0.8)], state, "target")
    assert props[0].affordance == 0.8


def test_prioritize_decay_at_10cm():
    state = StorageState(objects=[tracked_box()])
    props = prioritize_for_target([sprop([0.2, 0.05, 0.2], 0.8)], state, "target")
    assert props[0].affordance == pytest.approx(0.8 * math.exp(-2.0))


def test_prioritize_unknown_target():
    with pytest.raises(KeyError):
        prioritize_for_target([], StorageState(), "ghost")


def test_prioritize_empty_list():
    state = StorageState(objects=[tracked_box()])
    assert prioritize_for_target([], state, "target") == []


def test_prioritize_stable_for_equal_distance():
    state = StorageState(objects=[tracked_box()])
    a = sprop([0.2, 0.05, 0.1], 0.5)
    b = sprop([0.2, 0.05, 0.1], 0.5)
    out = prioritize_for_target([a, b], state, "target")
    assert out[0].point_index == a.point_index
    assert [p.affordance for p in out] == [out[0].affordance] * 2


def test_prioritize_reorders_by_scaled_affordance():
    state = StorageState(objects=[tracked_box()])
    near = sprop([0.05, 0.05, 0.1], 0.5)   # inside footprint
    far = sprop([0.4, 0.05, 0.1], 0.9)     # 30 cm away: 0.9*e^-6 tiny
    out = prioritize_for_target([far, near], state, "target")
    assert out[0].affordance == 0.5


def test_tracked_object_validation():
    with pytest.raises(ValueError):
        TrackedObject("x", RigidTransform.identity(),
                      np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 1.0]))
