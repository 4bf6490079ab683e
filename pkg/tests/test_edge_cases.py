"""Edge and failure-path coverage that the main suites do not reach."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binpick.affordance import (AffordanceMap, PrimitiveKind, SuctionProposal,
                                load_learned_map, save_affordance_map)
from binpick.cli import main
from binpick.planner import (AttemptRecord, PlannerConfig, PlannerState,
                             speed_pick_batch)
from binpick.recognition import EmbeddingModel, load_feature_vectors, load_model
from binpick.rgbd import PointCloud, background_subtract, icp_register

from conftest import make_frame, structured_cloud

SD = PrimitiveKind.SUCTION_DOWN


def sprop(pos, aff, kind=SD, index=0):
    return SuctionProposal(np.asarray(pos, float), np.array([0.0, 0.0, 1.0]),
                           aff, kind, index)


@settings(deadline=None, max_examples=20)
@given(depth=arrays(np.float64, (9, 11), elements=st.floats(0.0, 5.0)),
       color_seed=st.integers(0, 2 ** 16))
def test_background_subtract_self_always_false(depth, color_seed):
    rng = np.random.default_rng(color_seed)
    color = rng.integers(0, 256, (9, 11, 3)).astype(np.uint8)
    frame = make_frame(depth, color=color)
    assert not background_subtract(frame, frame, 30 / 255, 0.01).any()


def test_icp_reports_failure_on_hopeless_correspondences(rng):
    # two far-apart rings with incompatible structure: ICP cannot reach a
    # meaningful alignment but must still return its best transform
    source = structured_cloud(rng, n=60)
    scattered = PointCloud(rng.uniform(-5, 5, (60, 3)),
                           np.zeros((60, 3), np.uint8))
    result = icp_register(source, scattered, max_iters=15)
    assert np.isfinite(result.rms)
    assert result.transform.rotation.shape == (3, 3)


def test_learned_map_truncated_file(tmp_path):
    path = tmp_path / "t.affd"
    with open(path, "wb") as f:
        f.write(b"AFFD")
        f.write(struct.pack("<IIIIf", 1, 10, 10, 0, float("nan")))
        f.write(b"\x00" * 12)  # far fewer than 400 bytes of payload
    with pytest.raises(ValueError, match="truncated"):
        load_learned_map(path)


def test_learned_map_bad_magic(tmp_path):
    path = tmp_path / "bad.affd"
    path.write_bytes(b"JUNKxxxxxxxxxxxxxxxxxxxxxxxx")
    with pytest.raises(ValueError, match="not an affordance map"):
        load_learned_map(path)


def test_model_file_truncated(tmp_path):
    path = tmp_path / "m.embd"
    with open(path, "wb") as f:
        f.write(b"EMBD")
        f.write(struct.pack("<III", 1, 4, 4))
        f.write(b"\x00" * 8)
    with pytest.raises(ValueError, match="truncated"):
        load_model(path)


def test_feature_file_truncated(tmp_path):
    path = tmp_path / "f.feat"
    with open(path, "wb") as f:
        f.write(b"FEAT")
        f.write(struct.pack("<III", 1, 8, 3))
        f.write(struct.pack("<H", 2) + b"ab" + b"\x00" * 8)
    with pytest.raises((ValueError, struct.error)):
        load_feature_vectors(path, "observed")


def test_planner_config_does_not_mutate_caller_dict():
    gamma = {SD: 0.5}
    PlannerConfig(gamma=gamma)
    assert gamma == {SD: 0.5}


def test_speed_pick_batch_applies_state_suppression():
    cfg = PlannerConfig()
    state = PlannerState(clock=10.0)
    state.record(AttemptRecord(5.0, SD, np.array([0.1, 0.1, 0.0]), False))
    props = [sprop([0.1, 0.1, 0.0], 0.95, index=0),   # suppressed
             sprop([0.2, 0.1, 0.0], 0.40, index=1)]
    batch = speed_pick_batch(props, cfg, k=2, state=state)
    assert [p.point_index for p in batch] == [1]


def test_speed_pick_batch_rejects_bad_k():
    with pytest.raises(ValueError):
        speed_pick_batch([], PlannerConfig(), k=0)


def test_embedding_model_validates():
    with pytest.raises(ValueError):
        EmbeddingModel(np.full((2, 2), np.nan), np.zeros(2))
    with pytest.raises(ValueError):
        EmbeddingModel(np.eye(3), np.zeros(2))


def test_affordance_map_requires_2d_finite():
    with pytest.raises(ValueError):
        AffordanceMap(np.array([[np.inf]]), "suction")


def test_cli_recognize_bench_deterministic(tmp_path):
    outs = []
    for run in range(2):
        out = tmp_path / f"r{run}.json"
        code = main(["recognize", "--seed", "3", "--cases", "40",
                     "--epochs", "6", "--out", str(out)])
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_cli_evaluate_learned_maps(tmp_path):
    from test_evaluation import build_dataset
    from binpick.heightmap import grid_shape
    from binpick.synthetic import standard_bin
    root = build_dataset(tmp_path, n_scenes=5)
    dataset_bin = standard_bin(0.2, 0.2)
    hm_shape = grid_shape(dataset_bin, 0.002)
    # drop learned maps into every scene: per-frame suction + 4 grasp angles
    for scene_dir in (root / "scenes").iterdir():
        learned = scene_dir / "learned"
        learned.mkdir()
        save_affordance_map(learned / "suction_000.affd",
                            AffordanceMap(np.full((64, 64), 0.5), "suction"))
        for i in range(4):
            values = np.zeros(hm_shape)
            values[50, 50] = 0.8
            save_affordance_map(learned / f"grasp_{i:03d}.affd",
                                AffordanceMap(values, "grasp",
                                              angle=i * np.pi / 4))
    out = tmp_path / "table.json"
    assert main(["evaluate", str(root), "--method", "learned", "--angles", "4",
                 "--out", str(out)]) == 0
    table = json.loads(out.read_text())
    assert table["method"] == "learned"


def test_catalog_rejects_inconsistent_dimensions():
    from binpick.recognition import ProductCatalog
    catalog = ProductCatalog()
    catalog.add("a", np.zeros(8))
    catalog.add("b", np.ones(8))
    with pytest.raises(ValueError, match="dimension"):
        catalog.add("c", np.zeros(16))
