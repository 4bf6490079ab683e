"""Cross-domain matching of observed-object features to product features.

Product-side features live in a frozen reference space (guided embedding);
only the observed-side map is trained, with a squared softmax-ratio triplet
loss, per-sample nearest-product anchor selection, and optionally an
auxiliary classification head over the known objects (K-net). Recognition
runs in two stages: a recollection stage thresholds the nearest-known-product
distance to decide known vs novel, then the matching stage ranks candidates
with the model fitting that verdict (K-net for known, N-net for novel).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

_FEAT_MAGIC = b"FEAT"
_FEAT_VERSION = 1
_EMBD_MAGIC = b"EMBD"
_EMBD_VERSION = 1

KNOWN = "known"
NOVEL = "novel"


@dataclass
class FeatureVector:
    values: np.ndarray
    source: str  # "product" | "observed"
    object_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.values).all():
            raise ValueError("feature values must be finite")
        if self.source not in ("product", "observed"):
            raise ValueError(f"unknown feature source {self.source!r}")


@dataclass
class EmbeddingModel:
    """Affine observed-stream map into the product-feature space."""

    weights: np.ndarray  # (d_out, d_in)
    bias: np.ndarray     # (d_out,)
    trained: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.bias):
            raise ValueError("weights/bias shapes disagree")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("model parameters must be finite")

    @classmethod
    def identity(cls, d_in: int, d_out: int | None = None) -> "EmbeddingModel":
        d_out = d_in if d_out is None else d_out
        return cls(np.eye(d_out, d_in), np.zeros(d_out))

    def embed(self, values: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(values, dtype=np.float64) + self.bias


@dataclass
class ProductCatalog:
    """Product feature vectors per object; `known` marks objects seen in
    training. Every object needs at least one product vector."""

    _vectors: dict = field(default_factory=dict)   # object_id -> list[np.ndarray]
    _known: set = field(default_factory=set)

    def add(self, object_id: str, values: np.ndarray, known: bool = False) -> None:
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        for existing in self._vectors.values():
            if existing and len(existing[0]) != len(values):
                raise ValueError(
                    f"feature dimension {len(values)} does not match the "
                    f"catalog's {len(existing[0])}")
            break
        self._vectors.setdefault(object_id, []).append(values)
        if known:
            self._known.add(object_id)

    def mark_known(self, object_id: str) -> None:
        if object_id not in self._vectors:
            raise KeyError(f"unknown object {object_id!r}")
        self._known.add(object_id)

    def vectors(self, object_id: str) -> list[np.ndarray]:
        if object_id not in self._vectors:
            raise KeyError(f"unknown object {object_id!r}")
        return self._vectors[object_id]

    def ids(self) -> list[str]:
        return sorted(self._vectors)

    def known_ids(self) -> list[str]:
        return sorted(self._known)

    def novel_ids(self) -> list[str]:
        return sorted(set(self._vectors) - self._known)

    def is_known(self, object_id: str) -> bool:
        return object_id in self._known

    def __contains__(self, object_id: str) -> bool:
        return object_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)


@dataclass(frozen=True)
class RecognitionConfig:
    k_threshold: float
    knet: EmbeddingModel
    nnet: EmbeddingModel

    def __post_init__(self):
        if self.k_threshold <= 0:
            raise ValueError("k_threshold must be positive")


# --- losses and gradients ----------------------------------------------------

def _smooth_norm(v: np.ndarray, eps: float) -> float:
    return float(np.sqrt(v @ v + eps * eps))


def triplet_ratio_loss(model: EmbeddingModel, observed: np.ndarray,
                       pos: np.ndarray, neg: np.ndarray, eps: float = 1e-8):
    """Squared softmax-ratio triplet loss and its analytic parameter gradients.

    With dp = |f(observed) - pos| and dn = |f(observed) - neg|, the loss is
    (e^dp / (e^dp + e^dn))^2 = sigmoid(dp - dn)^2: 0.25 when the distances
    tie, approaching 0 as the positive pulls ahead. Distances are smoothed by
    eps so degenerate zero-distance pairs stay differentiable.

    Returns (loss, grad_weights, grad_bias).
    """
    observed = np.asarray(observed, dtype=np.float64)
    e = model.embed(observed)
    to_pos = e - np.asarray(pos, dtype=np.float64)
    to_neg = e - np.asarray(neg, dtype=np.float64)
    dp = _smooth_norm(to_pos, eps)
    dn = _smooth_norm(to_neg, eps)
    r = float(expit(dp - dn))
    loss = r * r
    coeff = 2.0 * r * r * (1.0 - r)
    grad_e = coeff * (to_pos / dp - to_neg / dn)
    return loss, np.outer(grad_e, observed), grad_e


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def joint_knet_loss(model: EmbeddingModel, cls_weights: np.ndarray,
                    cls_bias: np.ndarray, observed: np.ndarray, pos: np.ndarray,
                    neg: np.ndarray, class_index: int, lam: float,
                    eps: float = 1e-8):
    """Triplet loss plus lam * cross-entropy through the auxiliary classifier.

    Returns (loss, grad_weights, grad_bias, grad_cls_weights, grad_cls_bias).
    The classifier reads the embedded vector; it exists only during training.
    """
    observed = np.asarray(observed, dtype=np.float64)
    e = model.embed(observed)
    to_pos = e - np.asarray(pos, dtype=np.float64)
    to_neg = e - np.asarray(neg, dtype=np.float64)
    dp = _smooth_norm(to_pos, eps)
    dn = _smooth_norm(to_neg, eps)
    r = float(expit(dp - dn))
    coeff = 2.0 * r * r * (1.0 - r)
    grad_e = coeff * (to_pos / dp - to_neg / dn)

    logits = cls_weights @ e + cls_bias
    probs = _softmax(logits)
    ce = -float(np.log(max(probs[class_index], 1e-300)))
    dlogits = probs.copy()
    dlogits[class_index] -= 1.0
    grad_e = grad_e + lam * (cls_weights.T @ dlogits)

    loss = r * r + lam * ce
    return (loss, np.outer(grad_e, observed), grad_e,
            lam * np.outer(dlogits, e), lam * dlogits)


# --- training ----------------------------------------------------------------

def select_anchor(observed_embedded: np.ndarray, product_vectors) -> np.ndarray:
    """Multi-anchor switch: nearest product vector by l2, first index on ties."""
    vectors = list(product_vectors)
    if not vectors:
        raise ValueError("need at least one product vector")
    dists = [np.linalg.norm(np.asarray(v) - observed_embedded) for v in vectors]
    return np.asarray(vectors[int(np.argmin(dists))], dtype=np.float64)


def _train(samples, catalog: ProductCatalog, epochs: int, lr: float,
           momentum: float, seed: int, lam: float, with_classifier: bool):
    known = catalog.known_ids()
    if len(known) < 2:
        raise ValueError("training needs at least 2 known objects to form negatives")
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    d_in = len(np.asarray(samples[0][1]))
    d_out = len(catalog.vectors(known[0])[0])
    model = EmbeddingModel.identity(d_in, d_out)
    class_index = {oid: i for i, oid in enumerate(known)}
    negatives = {oid: [k for k in known if k != oid] for oid in known}

    # The auxiliary classifier starts at the nearest-anchor softmax: logits
    # 2*a.e - |a|^2 rank classes by distance to their mean product anchor, so
    # the classification pressure on the shared map is anchor-aligned from
    # step one. Deterministic init keeps the random stream identical to
    # classifier-free training.
    cls_w = np.zeros((len(known), d_out))
    cls_b = np.zeros(len(known))
    if with_classifier:
        for oid, idx in class_index.items():
            anchor = np.mean(catalog.vectors(oid), axis=0)
            cls_w[idx] = 2.0 * anchor
            cls_b[idx] = -float(anchor @ anchor)
    vel_w = np.zeros_like(model.weights)
    vel_b = np.zeros_like(model.bias)
    vel_cw = np.zeros_like(cls_w)
    vel_cb = np.zeros_like(cls_b)

    rng = np.random.default_rng(seed)
    epoch_losses = []
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for si in order:
            oid, raw = samples[si]
            if oid not in class_index:
                raise ValueError(f"sample object {oid!r} is not a known catalog object")
            obs = np.asarray(raw, dtype=np.float64)
            embedded = model.embed(obs)
            pos = select_anchor(embedded, catalog.vectors(oid))
            neg_choices = negatives[oid]
            neg_id = neg_choices[int(rng.integers(len(neg_choices)))]
            neg_vecs = catalog.vectors(neg_id)
            neg = neg_vecs[int(rng.integers(len(neg_vecs)))]
            if with_classifier:
                loss, gw, gb, gcw, gcb = joint_knet_loss(
                    model, cls_w, cls_b, obs, pos, neg, class_index[oid], lam)
                vel_cw = momentum * vel_cw - lr * gcw
                vel_cb = momentum * vel_cb - lr * gcb
                cls_w = cls_w + vel_cw
                cls_b = cls_b + vel_cb
            else:
                loss, gw, gb = triplet_ratio_loss(model, obs, pos, neg)
            vel_w = momentum * vel_w - lr * gw
            vel_b = momentum * vel_b - lr * gb
            model.weights = model.weights + vel_w
            model.bias = model.bias + vel_b
            total += loss
        epoch_losses.append(total / len(samples))
    model.trained = epochs > 0
    return model, epoch_losses


def train_embedding(samples, catalog: ProductCatalog, epochs: int = 30,
                    lr: float = 1e-3, momentum: float = 0.99,
                    seed: int = 0) -> tuple[EmbeddingModel, list[float]]:
    """SGD with momentum on the triplet ratio loss (N-net training).

    `samples` is an iterable of (object_id, observed_vector) pairs over known
    objects. Product vectors are never updated: the product stream is the
    frozen reference space the observed stream learns to map into. Returns
    the model and per-epoch mean losses.
    """
    return _train(samples, catalog, epochs, lr, momentum, seed,
                  lam=0.0, with_classifier=False)


def train_knet(samples, catalog: ProductCatalog, epochs: int = 30,
               lr: float = 1e-3, momentum: float = 0.99, seed: int = 0,
               lam: float = 1.0) -> tuple[EmbeddingModel, list[float]]:
    """train_embedding plus an auxiliary softmax classifier over known objects.

    The classification term sharpens known-object matching at the cost of
    generality; the classifier itself is dropped after training. With lam=0
    the trajectory is identical to train_embedding under the same seed.
    """
    return _train(samples, catalog, epochs, lr, momentum, seed,
                  lam=lam, with_classifier=True)


# --- inference ---------------------------------------------------------------

def _min_known_distance(embedded: np.ndarray, catalog: ProductCatalog) -> float:
    best = np.inf
    for oid in catalog.known_ids():
        for v in catalog.vectors(oid):
            best = min(best, float(np.linalg.norm(v - embedded)))
    return best


def recollect(observed, knet: EmbeddingModel, catalog: ProductCatalog,
              k_threshold: float) -> str:
    """Known-vs-novel verdict: novel iff the K-net embedding sits farther than
    k_threshold from every known object's product vectors."""
    if not catalog.known_ids():
        raise ValueError("catalog has no known objects")
    values = observed.values if isinstance(observed, FeatureVector) else observed
    embedded = knet.embed(values)
    return NOVEL if _min_known_distance(embedded, catalog) > k_threshold else KNOWN


def rank_candidates(observed, model: EmbeddingModel, catalog: ProductCatalog,
                    candidate_ids) -> list[str]:
    """Candidates sorted by distance to their nearest product anchor,
    ascending; the sort is stable so appending far candidates never perturbs
    the existing prefix."""
    candidate_ids = list(candidate_ids)
    if not candidate_ids:
        raise ValueError("no candidates to rank")
    missing = [c for c in candidate_ids if c not in catalog]
    if missing:
        raise KeyError(f"candidates not in catalog: {missing}")
    values = observed.values if isinstance(observed, FeatureVector) else observed
    embedded = model.embed(values)
    dists = [np.linalg.norm(select_anchor(embedded, catalog.vectors(c)) - embedded)
             for c in candidate_ids]
    order = np.argsort(dists, kind="stable")
    return [candidate_ids[i] for i in order]


def recognize(observed, config: RecognitionConfig, catalog: ProductCatalog,
              candidate_ids) -> list[str]:
    """Two-stage recognition: recollect, then rank with the matching model."""
    return two_stage_match(observed, config, catalog, candidate_ids)[1]


def two_stage_match(observed, config: RecognitionConfig, catalog: ProductCatalog,
                    candidate_ids) -> tuple[str, list[str]]:
    verdict = recollect(observed, config.knet, catalog, config.k_threshold)
    model = config.knet if verdict == KNOWN else config.nnet
    return verdict, rank_candidates(observed, model, catalog, candidate_ids)


def calibrate_k_threshold(knet: EmbeddingModel, catalog: ProductCatalog,
                          validation) -> float:
    """Threshold maximizing balanced known-vs-novel accuracy on a validation
    set of (is_known, observed_vector) pairs. Ties pick the smallest k."""
    validation = list(validation)
    if not validation:
        raise ValueError("empty validation set")
    dists = np.array([_min_known_distance(knet.embed(v), catalog)
                      for _, v in validation])
    labels = np.array([bool(k) for k, _ in validation])
    cuts = np.unique(dists)
    candidates = np.concatenate([[cuts[0] / 2.0 if cuts[0] > 0 else 1e-12],
                                 (cuts[:-1] + cuts[1:]) / 2.0,
                                 [cuts[-1] * 1.5 + 1e-12]])
    best_k = float(candidates[0])
    best_score = -1.0
    n_known = max(labels.sum(), 1)
    n_novel = max((~labels).sum(), 1)
    for k in candidates:
        tpr = np.sum(labels & (dists <= k)) / n_known
        tnr = np.sum(~labels & (dists > k)) / n_novel
        score = (tpr + tnr) / 2.0
        if score > best_score:
            best_score = score
            best_k = float(k)
    return best_k


# --- file formats -------------------------------------------------------------

def save_feature_vectors(path, vectors: list[FeatureVector]) -> None:
    if not vectors:
        raise ValueError("nothing to save")
    d = len(vectors[0].values)
    if any(len(v.values) != d for v in vectors):
        raise ValueError("inconsistent feature dimensions")
    with open(path, "wb") as f:
        f.write(_FEAT_MAGIC)
        f.write(struct.pack("<III", _FEAT_VERSION, d, len(vectors)))
        for v in vectors:
            ident = v.object_id.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(v.values.astype("<f4").tobytes())


def load_feature_vectors(path, source: str) -> list[FeatureVector]:
    with open(path, "rb") as f:
        if f.read(4) != _FEAT_MAGIC:
            raise ValueError(f"{path}: not a feature file")
        version, d, count = struct.unpack("<III", f.read(12))
        if version != _FEAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        out = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", f.read(2))
            object_id = f.read(id_len).decode("utf-8")
            values = np.frombuffer(f.read(4 * d), dtype="<f4").astype(np.float64)
            if len(values) != d:
                raise ValueError(f"{path}: truncated feature file")
            out.append(FeatureVector(values, source, object_id))
    return out


def save_model(path, model: EmbeddingModel) -> None:
    d_out, d_in = model.weights.shape
    with open(path, "wb") as f:
        f.write(_EMBD_MAGIC)
        f.write(struct.pack("<III", _EMBD_VERSION, d_in, d_out))
        f.write(model.weights.astype("<f4").tobytes())
        f.write(model.bias.astype("<f4").tobytes())


def load_model(path) -> EmbeddingModel:
    with open(path, "rb") as f:
        if f.read(4) != _EMBD_MAGIC:
            raise ValueError(f"{path}: not a model file")
        version, d_in, d_out = struct.unpack("<III", f.read(12))
        if version != _EMBD_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        weights = np.frombuffer(f.read(4 * d_in * d_out), dtype="<f4")
        bias = np.frombuffer(f.read(4 * d_out), dtype="<f4")
    if weights.size != d_in * d_out or bias.size != d_out:
        raise ValueError(f"{path}: truncated model file")
    return EmbeddingModel(weights.reshape(d_out, d_in).astype(np.float64),
                          bias.astype(np.float64), trained=True)


# --- synthetic feature worlds (benchmark scaffolding) -------------------------

@dataclass
class SyntheticFeatureWorld:
    """Generative stand-in for the two camera domains: product features are
    cluster centers plus small noise, observed features are the same clusters
    pushed through an unknown affine distortion plus a strong low-rank
    nuisance (pose/lighting variation lives in a few directions, so it causes
    matching confusions without widening every distance)."""

    centers: dict
    distortion: np.ndarray
    shift: np.ndarray
    observed_noise: float
    nuisance_basis: np.ndarray  # (d, r) orthonormal columns
    nuisance_scale: float
    rng: np.random.Generator

    def observe(self, object_id: str) -> np.ndarray:
        return self.observe_center(self.centers[object_id])

    def observe_center(self, center: np.ndarray) -> np.ndarray:
        d = len(center)
        clean = center + self.observed_noise * self.rng.standard_normal(d)
        if self.nuisance_basis.shape[1]:
            eta = self.nuisance_scale * self.rng.standard_normal(
                self.nuisance_basis.shape[1])
            clean = clean + self.nuisance_basis @ eta
        return self.distortion @ clean + self.shift

    def unseen_center(self) -> np.ndarray:
        """A fresh cluster center outside the catalog, for threshold
        calibration against pseudo-novel observations."""
        return self.rng.standard_normal(len(self.shift))


def make_synthetic_world(object_ids, d: int = 32, product_per_object: int = 3,
                         product_noise: float = 0.03, observed_noise: float = 0.25,
                         distortion_scale: float = 0.35, known_ids=None,
                         known_scale: float = 1.0, known_rank: int | None = None,
                         nuisance_rank: int = 4, nuisance_scale: float = 1.8,
                         seed: int = 0) -> tuple[SyntheticFeatureWorld, ProductCatalog]:
    """Random cluster centers, a product catalog around them, and an observed
    domain with an unknown affine distortion and low-rank nuisance variation.

    Objects in `known_ids` are flagged known in the catalog. `known_scale` < 1
    packs the known centers into a tighter ball (a mutually confusable
    product family) and `known_rank` confines them to a random subspace, the
    way one product family shares a few appearance factors while novel
    objects vary everywhere; the nuisance subspace makes observations of
    different objects collide along a few directions without widening the
    known-vs-novel separation that recollection thresholds."""
    rng = np.random.default_rng(seed)
    object_ids = list(object_ids)
    known_ids = set(known_ids or ())
    family_basis = None
    if known_rank is not None and known_rank < d:
        family_basis, _ = np.linalg.qr(rng.standard_normal((d, known_rank)))
    centers = {}
    for oid in object_ids:
        if oid in known_ids and family_basis is not None:
            coords = rng.standard_normal(family_basis.shape[1])
            centers[oid] = family_basis @ coords * math.sqrt(d / family_basis.shape[1])
        else:
            centers[oid] = rng.standard_normal(d)
        if oid in known_ids:
            centers[oid] = centers[oid] * known_scale

    # The cross-domain distortion concentrates on the appearance factors the
    # product family spans; directions orthogonal to the family stay nearly
    # consistent across domains. Nuisance variation lives inside the family
    # subspace too, where it can be confused with identity.
    if family_basis is not None:
        r = family_basis.shape[1]
        q, _ = np.linalg.qr(rng.standard_normal((r, r)))
        block = distortion_scale * (q - np.eye(r)) \
            + 0.05 * rng.standard_normal((r, r))
        distortion = np.eye(d) + family_basis @ block @ family_basis.T \
            + 0.01 * rng.standard_normal((d, d))
        raw = rng.standard_normal((r, max(nuisance_rank, 1)))
        basis, _ = np.linalg.qr(family_basis @ raw)
    else:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        distortion = np.eye(d) + distortion_scale * (q - np.eye(d)) \
            + 0.05 * rng.standard_normal((d, d))
        basis, _ = np.linalg.qr(rng.standard_normal((d, max(nuisance_rank, 1))))
    basis = basis[:, :nuisance_rank]
    shift = 0.1 * rng.standard_normal(d)

    catalog = ProductCatalog()
    for oid in object_ids:
        for _ in range(product_per_object):
            catalog.add(oid, centers[oid] + product_noise * rng.standard_normal(d),
                        known=oid in known_ids)
    world = SyntheticFeatureWorld(centers, distortion, shift, observed_noise,
                                  basis, nuisance_scale, rng)
    return world, catalog
