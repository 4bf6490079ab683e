import math

import numpy as np
import pytest

from binpick.recognition import (KNOWN, NOVEL, EmbeddingModel, FeatureVector,
                                 ProductCatalog, RecognitionConfig,
                                 calibrate_k_threshold, joint_knet_loss,
                                 load_feature_vectors, load_model,
                                 make_synthetic_world, rank_candidates,
                                 recognize, recollect, save_feature_vectors,
                                 save_model, select_anchor, train_embedding,
                                 train_knet, triplet_ratio_loss,
                                 two_stage_match)


def toy_catalog(n_objects=4, d=6, seed=0):
    rng = np.random.default_rng(seed)
    catalog = ProductCatalog()
    centers = {}
    for i in range(n_objects):
        oid = f"obj{i}"
        centers[oid] = rng.standard_normal(d) * 2.0
        for _ in range(2):
            catalog.add(oid, centers[oid] + 0.05 * rng.standard_normal(d),
                        known=True)
    return catalog, centers, rng


# --- triplet ratio loss -----------------------------------------------------------

def test_triplet_loss_symmetric_is_quarter():
    model = EmbeddingModel.identity(3)
    obs = np.zeros(3)
    pos = np.array([1.0, 0.0, 0.0])
    neg = np.array([0.0, 1.0, 0.0])  # same distance from origin
    loss, _, _ = triplet_ratio_loss(model, obs, pos, neg)
    assert loss == pytest.approx(0.25, abs=1e-12)


def test_triplet_loss_limit_towards_zero():
    model = EmbeddingModel.identity(2)
    obs = np.array([0.0, 0.0])
    loss, _, _ = triplet_ratio_loss(model, obs, pos=np.array([1e-9, 0.0]),
                                    neg=np.array([30.0, 0.0]))
    assert loss < 1e-12


def test_triplet_loss_decreases_with_margin():
    model = EmbeddingModel.identity(2)
    obs = np.zeros(2)
    losses = [triplet_ratio_loss(model, obs, np.array([0.1, 0.0]),
                                 np.array([dneg, 0.0]))[0]
              for dneg in (0.1, 0.5, 1.0, 3.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def _finite_diff(fn, param, h=1e-6):
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        old = param[idx]
        param[idx] = old + h
        up = fn()
        param[idx] = old - h
        down = fn()
        param[idx] = old
        grad[idx] = (up - down) / (2 * h)
        it.iternext()
    return grad


def test_triplet_gradients_match_finite_differences(rng):
    d = 8
    for _ in range(10):
        model = EmbeddingModel(np.eye(d) + 0.1 * rng.standard_normal((d, d)),
                               0.1 * rng.standard_normal(d))
        obs = rng.standard_normal(d)
        pos = rng.standard_normal(d)
        neg = rng.standard_normal(d)
        loss, gw, gb = triplet_ratio_loss(model, obs, pos, neg)
        fw = _finite_diff(lambda: triplet_ratio_loss(model, obs, pos, neg)[0],
                          model.weights)
        fb = _finite_diff(lambda: triplet_ratio_loss(model, obs, pos, neg)[0],
                          model.bias)
        scale = max(np.abs(fw).max(), np.abs(fb).max(), 1e-8)
        assert np.abs(gw - fw).max() / scale < 1e-4
        assert np.abs(gb - fb).max() / scale < 1e-4


def test_joint_loss_gradients_match_finite_differences(rng):
    d, n_cls = 6, 3
    for _ in range(10):
        model = EmbeddingModel(np.eye(d) + 0.1 * rng.standard_normal((d, d)),
                               0.1 * rng.standard_normal(d))
        cw = 0.3 * rng.standard_normal((n_cls, d))
        cb = 0.1 * rng.standard_normal(n_cls)
        obs, pos, neg = (rng.standard_normal(d) for _ in range(3))
        cls = int(rng.integers(n_cls))
        lam = 0.7
        loss, gw, gb, gcw, gcb = joint_knet_loss(model, cw, cb, obs, pos, neg,
                                                 cls, lam)

        def f():
            return joint_knet_loss(model, cw, cb, obs, pos, neg, cls, lam)[0]

        for analytic, param in ((gw, model.weights), (gb, model.bias),
                                (gcw, cw), (gcb, cb)):
            numeric = _finite_diff(f, param)
            scale = max(np.abs(numeric).max(), 1e-8)
            assert np.abs(analytic - numeric).max() / scale < 1e-4


def test_joint_loss_lambda_zero_equals_triplet(rng):
    d = 5
    model = EmbeddingModel(np.eye(d) + 0.05 * rng.standard_normal((d, d)),
                           np.zeros(d))
    obs, pos, neg = (rng.standard_normal(d) for _ in range(3))
    base, gw0, gb0 = triplet_ratio_loss(model, obs, pos, neg)
    joint, gw, gb, gcw, gcb = joint_knet_loss(model, np.zeros((2, d)),
                                              np.zeros(2), obs, pos, neg, 0, 0.0)
    assert joint == pytest.approx(base, abs=1e-15)
    np.testing.assert_array_equal(gw, gw0)
    np.testing.assert_array_equal(gcw, 0.0)


# --- anchors, recollection, ranking ------------------------------------------------

def test_select_anchor_single():
    v = np.array([1.0, 2.0])
    np.testing.assert_array_equal(select_anchor(np.zeros(2), [v]), v)


def test_select_anchor_exact_match():
    vecs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    np.testing.assert_array_equal(select_anchor(np.array([0.0, 1.0]), vecs),
                                  vecs[1])


def test_select_anchor_matches_bruteforce(rng):
    for _ in range(50):
        vecs = [rng.standard_normal(4) for _ in range(6)]
        q = rng.standard_normal(4)
        expected = min(range(6), key=lambda i: (np.linalg.norm(vecs[i] - q), i))
        np.testing.assert_array_equal(select_anchor(q, vecs), vecs[expected])


def test_recollect_known_and_novel():
    catalog, centers, _ = toy_catalog()
    knet = EmbeddingModel.identity(6)
    assert recollect(catalog.vectors("obj0")[0], knet, catalog, 0.5) == KNOWN
    far = np.full(6, 40.0)
    assert recollect(far, knet, catalog, 0.5) == NOVEL


def test_recollect_monotone_single_flip(rng):
    catalog, _, _ = toy_catalog()
    knet = EmbeddingModel.identity(6)
    for _ in range(20):
        observed = rng.standard_normal(6) * 3.0
        verdicts = [recollect(observed, knet, catalog, k)
                    for k in np.linspace(1e-6, 50.0, 200)]
        flips = sum(a != b for a, b in zip(verdicts, verdicts[1:]))
        assert flips == 1
        assert verdicts[0] == NOVEL and verdicts[-1] == KNOWN


def test_rank_single_candidate():
    catalog, _, _ = toy_catalog()
    model = EmbeddingModel.identity(6)
    assert rank_candidates(catalog.vectors("obj2")[0], model, catalog,
                           ["obj1"]) == ["obj1"]


def test_rank_exact_match_first():
    catalog, _, _ = toy_catalog()
    model = EmbeddingModel.identity(6)
    observed = catalog.vectors("obj1")[0]
    ranking = rank_candidates(observed, model, catalog,
                              ["obj0", "obj1", "obj2", "obj3"])
    assert ranking[0] == "obj1"


def test_rank_prefix_stable_under_far_candidates():
    catalog, centers, rng = toy_catalog()
    far = ProductCatalog()
    for oid in catalog.ids():
        for v in catalog.vectors(oid):
            far.add(oid, v, known=True)
    far.add("faraway", np.full(6, 80.0))
    model = EmbeddingModel.identity(6)
    observed = catalog.vectors("obj1")[0] + 0.01
    base = rank_candidates(observed, model, catalog, catalog.ids())
    extended = rank_candidates(observed, model, far, catalog.ids() + ["faraway"])
    assert extended[:len(base)] == base
    assert extended[-1] == "faraway"


def test_rank_requires_candidates_in_catalog():
    catalog, _, _ = toy_catalog()
    with pytest.raises(KeyError):
        rank_candidates(np.zeros(6), EmbeddingModel.identity(6), catalog,
                        ["missing"])
    with pytest.raises(ValueError):
        rank_candidates(np.zeros(6), EmbeddingModel.identity(6), catalog, [])


# --- training -----------------------------------------------------------------------

def test_train_zero_epochs_identity():
    catalog, centers, rng = toy_catalog()
    samples = [(oid, centers[oid]) for oid in catalog.ids()]
    model, losses = train_embedding(samples, catalog, epochs=0)
    assert not model.trained
    np.testing.assert_array_equal(model.weights, np.eye(6))
    np.testing.assert_array_equal(model.bias, np.zeros(6))
    assert losses == []


def test_train_zero_lr_unchanged():
    catalog, centers, rng = toy_catalog()
    samples = [(oid, centers[oid]) for oid in catalog.ids()]
    model, _ = train_embedding(samples, catalog, epochs=3, lr=0.0)
    np.testing.assert_array_equal(model.weights, np.eye(6))
    np.testing.assert_array_equal(model.bias, np.zeros(6))


def test_train_single_object_catalog_rejected():
    catalog = ProductCatalog()
    catalog.add("only", np.zeros(4), known=True)
    with pytest.raises(ValueError):
        train_embedding([("only", np.zeros(4))], catalog, epochs=1)


def test_train_loss_decreases_and_matches_clusters():
    # synthetic generative oracle: product clusters seen through an unknown
    # affine distortion; a trained model must undo it
    ids = [f"obj{i}" for i in range(10)]
    world, catalog = make_synthetic_world(ids, d=16, observed_noise=0.1,
                                          seed=4)
    for oid in ids:
        catalog.mark_known(oid)
    train = [(oid, world.observe(oid)) for oid in ids for _ in range(25)]
    model, losses = train_embedding(train, catalog, epochs=25, lr=0.01,
                                    momentum=0.9, seed=1)
    assert losses[-1] < losses[0]

    held_out = [(oid, world.observe(oid)) for oid in ids for _ in range(10)]
    hits = 0
    for oid, obs in held_out:
        ranking = rank_candidates(obs, model, catalog, ids)
        hits += ranking[0] == oid
    assert hits / len(held_out) >= 0.95


def test_knet_lambda_zero_matches_train_embedding():
    catalog, centers, rng = toy_catalog()
    samples = [(oid, centers[oid] + 0.1) for oid in catalog.ids() for _ in range(3)]
    plain, _ = train_embedding(samples, catalog, epochs=4, lr=1e-3, seed=9)
    knet, _ = train_knet(samples, catalog, epochs=4, lr=1e-3, seed=9, lam=0.0)
    np.testing.assert_array_equal(plain.weights, knet.weights)
    np.testing.assert_array_equal(plain.bias, knet.bias)


# --- two-stage pipeline ----------------------------------------------------------------

def test_two_stage_uses_verdict_model():
    catalog, centers, _ = toy_catalog()
    knet = EmbeddingModel.identity(6)
    nnet = EmbeddingModel.identity(6)
    config = RecognitionConfig(0.5, knet, nnet)
    observed = catalog.vectors("obj0")[0]
    verdict, ranking = two_stage_match(observed, config, catalog, catalog.ids())
    assert verdict == KNOWN
    assert ranking[0] == "obj0"
    assert recognize(observed, config, catalog, catalog.ids()) == ranking


def test_calibrate_k_threshold_separates():
    catalog, centers, rng = toy_catalog()
    knet = EmbeddingModel.identity(6)
    validation = [(True, centers[oid] + 0.02 * rng.standard_normal(6))
                  for oid in catalog.ids() for _ in range(5)]
    validation += [(False, rng.standard_normal(6) + 20.0) for _ in range(20)]
    k = calibrate_k_threshold(knet, catalog, validation)
    correct = sum((recollect(v, knet, catalog, k) == KNOWN) == is_known
                  for is_known, v in validation)
    assert correct / len(validation) == 1.0


# --- file formats -------------------------------------------------------------------

def test_feature_file_round_trip(tmp_path, rng):
    vectors = [FeatureVector(rng.standard_normal(16).astype(np.float32),
                             "product", f"item-{i}") for i in range(5)]
    path = tmp_path / "products.feat"
    save_feature_vectors(path, vectors)
    loaded = load_feature_vectors(path, "product")
    assert [v.object_id for v in loaded] == [v.object_id for v in vectors]
    for a, b in zip(loaded, vectors):
        np.testing.assert_array_equal(a.values, b.values.astype(np.float64))
    save_feature_vectors(tmp_path / "again.feat", loaded)
    assert (tmp_path / "again.feat").read_bytes() == path.read_bytes()


def test_model_file_round_trip(tmp_path, rng):
    model = EmbeddingModel(rng.standard_normal((8, 6)).astype(np.float32),
                           rng.standard_normal(8).astype(np.float32))
    path = tmp_path / "m.embd"
    save_model(path, model)
    loaded = load_model(path)
    assert loaded.trained
    np.testing.assert_array_equal(loaded.weights, model.weights)
    np.testing.assert_array_equal(loaded.bias, model.bias)
    save_model(tmp_path / "m2.embd", loaded)
    assert (tmp_path / "m2.embd").read_bytes() == path.read_bytes()


def test_feature_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.feat"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_feature_vectors(path, "product")


def test_product_vectors_never_move_during_training():
    catalog, centers, _ = toy_catalog()
    before = {oid: [v.copy() for v in catalog.vectors(oid)]
              for oid in catalog.ids()}
    samples = [(oid, centers[oid]) for oid in catalog.ids() for _ in range(4)]
    train_knet(samples, catalog, epochs=5, lr=1e-2, seed=0)
    for oid, vecs in before.items():
        for a, b in zip(vecs, catalog.vectors(oid)):
            np.testing.assert_array_equal(a, b)
