"""Dataset formats, label augmentation, and the two benchmarks:
precision-at-percentile for affordance proposals and the 1-vs-20
recognition benchmark.

Disk formats: suction labels are 8-bit PNG masks (0 = neither, 128 =
negative, 255 = positive), grasp labels a JSON array of
{row, col, angle_rad, polarity} on the heightmap grid.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .heightmap import BinGeometry
from .rgbd import RgbdFrame, list_frames, load_frame

MASK_NEITHER = 0
MASK_NEGATIVE = 128
MASK_POSITIVE = 255

POSITIVE = "positive"
NEGATIVE = "negative"

GRASP_MATCH_PIXELS = 4.0
GRASP_MATCH_ANGLE = math.radians(11.25)


@dataclass(frozen=True)
class GraspLabel:
    row: int
    col: int
    angle: float  # radians in [0, pi)
    polarity: str  # "positive" | "negative"

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {self.polarity!r}")
        if not 0.0 <= self.angle < math.pi:
            raise ValueError("grasp angle must lie in [0, pi)")


def save_suction_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=np.uint8)
    if not np.isin(mask, [MASK_NEITHER, MASK_NEGATIVE, MASK_POSITIVE]).all():
        raise ValueError("mask values must be 0, 128, or 255")
    Image.fromarray(mask, mode="L").save(path)


def load_suction_mask(path) -> np.ndarray:
    mask = np.asarray(Image.open(path).convert("L"))
    if not np.isin(mask, [MASK_NEITHER, MASK_NEGATIVE, MASK_POSITIVE]).all():
        raise ValueError(f"{path}: corrupt label mask (values outside 0/128/255)")
    return mask


def save_grasp_labels(path, labels: list[GraspLabel]) -> None:
    data = [{"row": lb.row, "col": lb.col, "angle_rad": lb.angle,
             "polarity": lb.polarity} for lb in labels]
    with open(path, "w") as f:
        json.dump(data, f, indent=1, sort_keys=True)


def load_grasp_labels(path) -> list[GraspLabel]:
    with open(path) as f:
        data = json.load(f)
    return [GraspLabel(int(d["row"]), int(d["col"]), float(d["angle_rad"]),
                       d["polarity"]) for d in data]


def jitter_augment(label: GraspLabel, resolution: float, count: int,
                   max_jitter: float = 0.016, bounds: tuple[int, int] | None = None,
                   rng: np.random.Generator | None = None) -> list[GraspLabel]:
    """`count` jittered copies with pixel offsets uniform in the disc of
    radius max_jitter/resolution, same angle and polarity, clipped to bounds."""
    rng = rng or np.random.default_rng(0)
    radius_px = max_jitter / resolution
    out = []
    for _ in range(count):
        # uniform in the disc via sqrt radius; offsets quantize toward zero so
        # the jitter stays strictly inside the disc
        r = radius_px * math.sqrt(rng.random())
        phi = 2.0 * math.pi * rng.random()
        row = label.row + math.trunc(r * math.sin(phi))
        col = label.col + math.trunc(r * math.cos(phi))
        if bounds is not None:
            row = min(max(row, 0), bounds[0] - 1)
            col = min(max(col, 0), bounds[1] - 1)
        out.append(replace(label, row=row, col=col))
    return out


# --- precision metrics ---------------------------------------------------------

def _slice_size(n: int, top_fraction: float | None, top_k: int | None) -> int:
    if (top_fraction is None) == (top_k is None):
        raise ValueError("give exactly one of top_fraction / top_k")
    if top_k is not None:
        return min(top_k, n)
    return min(math.ceil(top_fraction * n), n)


def suction_precision(proposals, mask: np.ndarray,
                      top_fraction: float | None = None,
                      top_k: int | None = None) -> float | None:
    """Precision of the top affordance slice against a trinary pixel mask.

    A proposal counts as a true positive when its source pixel is labeled
    positive, false positive when negative; 'neither' pixels count for
    nothing. Returns None when the slice contains no labeled proposals.
    """
    proposals = list(proposals)
    n = _slice_size(len(proposals), top_fraction, top_k)
    tp = fp = 0
    for prop in proposals[:n]:
        if prop.pixel is None:
            raise ValueError("suction proposal without a source pixel")
        _, row, col = prop.pixel
        value = mask[row, col]
        if value == MASK_POSITIVE:
            tp += 1
        elif value == MASK_NEGATIVE:
            fp += 1
    if tp + fp == 0:
        return None
    return tp / (tp + fp)


def angle_distance(a: float, b: float) -> float:
    """Angular distance between two gripper angles, mod pi (a 180-degree
    rotation is the same grasp)."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def grasp_matches(pixel: tuple[int, int], angle: float, label: GraspLabel) -> bool:
    dist = math.hypot(pixel[0] - label.row, pixel[1] - label.col)
    return dist <= GRASP_MATCH_PIXELS and angle_distance(angle, label.angle) <= GRASP_MATCH_ANGLE


def grasp_precision(proposals, labels: list[GraspLabel],
                    top_fraction: float | None = None,
                    top_k: int | None = None) -> float | None:
    """Precision of the top slice against sparse grasp labels.

    A proposal is a true positive if a positive label lies within 4 pixels
    and 11.25 degrees (mod pi); failing that, a false positive if a negative
    label qualifies; proposals with no qualifying label are excluded.
    """
    proposals = list(proposals)
    n = _slice_size(len(proposals), top_fraction, top_k)
    tp = fp = 0
    for prop in proposals[:n]:
        qualifying = [lb for lb in labels if grasp_matches(prop.pixel, prop.angle, lb)]
        if any(lb.polarity == POSITIVE for lb in qualifying):
            tp += 1
        elif qualifying:
            fp += 1
    if tp + fp == 0:
        return None
    return tp / (tp + fp)


def precision_table(proposals, labels_or_mask, kind: str) -> dict:
    """Top-1 / Top-1% / Top-5% / Top-10% precision row."""
    fn = suction_precision if kind == "suction" else grasp_precision
    return {
        "top1": fn(proposals, labels_or_mask, top_k=1),
        "top1pct": fn(proposals, labels_or_mask, top_fraction=0.01),
        "top5pct": fn(proposals, labels_or_mask, top_fraction=0.05),
        "top10pct": fn(proposals, labels_or_mask, top_fraction=0.10),
    }


# --- 1-vs-20 recognition benchmark ---------------------------------------------

@dataclass(frozen=True)
class BenchmarkCase:
    candidate_ids: tuple
    observed: np.ndarray
    truth: str

    def __post_init__(self):
        if len(self.candidate_ids) != 20:
            raise ValueError("a benchmark case has exactly 20 candidates")
        if self.truth not in self.candidate_ids:
            raise ValueError("ground truth must be among the candidates")


def generate_benchmark_cases(known_ids, novel_ids, observe, n_cases: int,
                             rng: np.random.Generator) -> list[BenchmarkCase]:
    """Random 10 known + 10 novel candidate sets; the ground truth object
    alternates between the known and novel pools and is always a candidate.
    `observe(object_id)` produces the observed feature vector."""
    known_ids = list(known_ids)
    novel_ids = list(novel_ids)
    if len(known_ids) < 10 or len(novel_ids) < 10:
        raise ValueError("need at least 10 known and 10 novel objects")
    cases = []
    for i in range(n_cases):
        truth_known = i % 2 == 0
        pool, other = (known_ids, novel_ids) if truth_known else (novel_ids, known_ids)
        truth = pool[int(rng.integers(len(pool)))]
        rest = [o for o in pool if o != truth]
        same_side = [truth] + [rest[j] for j in rng.permutation(len(rest))[:9]]
        other_side = [other[j] for j in rng.permutation(len(other))[:10]]
        candidates = same_side + other_side
        candidates = [candidates[j] for j in rng.permutation(20)]
        cases.append(BenchmarkCase(tuple(candidates), observe(truth), truth))
    return cases


def run_1v20_benchmark(cases: list[BenchmarkCase], pipeline,
                       is_known) -> dict:
    """Top-1 accuracy table for a recognition pipeline.

    `pipeline(observed, candidate_ids)` returns (verdict, ranking) where
    verdict is "known", "novel", or None when the pipeline has no
    recollection stage. `is_known(object_id)` gives the ground-truth split.
    Accuracies are percentages, split into known / novel / mixed plus the
    known-vs-novel verdict accuracy.
    """
    totals = {"known": [0, 0], "novel": [0, 0]}
    verdict_hits = 0
    verdict_total = 0
    for case in cases:
        verdict, ranking = pipeline(case.observed, case.candidate_ids)
        split = "known" if is_known(case.truth) else "novel"
        totals[split][1] += 1
        totals[split][0] += int(ranking[0] == case.truth)
        if verdict is not None:
            verdict_total += 1
            verdict_hits += int((verdict == "known") == is_known(case.truth))

    def pct(hits, n):
        return 100.0 * hits / n if n else None

    known_hits, known_n = totals["known"]
    novel_hits, novel_n = totals["novel"]
    return {
        "k_vs_n": pct(verdict_hits, verdict_total),
        "known": pct(known_hits, known_n),
        "novel": pct(novel_hits, novel_n),
        "mixed": pct(known_hits + novel_hits, known_n + novel_n),
    }


# --- synthetic benchmark driver --------------------------------------------------

def run_synthetic_1v20(seed: int = 0, n_objects: int = 40, n_cases: int = 200,
                       d: int = 32, epochs: int = 30, lr: float = 1e-3,
                       momentum: float = 0.9, aux_weight: float = 2.5,
                       train_per_object: int = 20) -> dict:
    """Train N-net and K-net on a synthetic feature world and score all three
    pipelines on the 1-vs-20 benchmark.

    The world is a product family: known centers share a 12-dimensional
    appearance subspace where the cross-domain distortion and a strong
    low-rank nuisance live, while novel objects vary across the whole space.
    That gives the two models their characteristic trade-off: the auxiliary
    classifier repairs the heavily distorted known family but churns the
    directions only novel objects use.
    """
    from . import recognition

    ids = [f"obj{i:02d}" for i in range(n_objects)]
    known, novel = ids[: n_objects // 2], ids[n_objects // 2:]
    world, catalog = recognition.make_synthetic_world(
        ids, d=d, observed_noise=0.3, distortion_scale=0.6, known_ids=known,
        known_scale=0.6, known_rank=max(4, d * 12 // 32), nuisance_rank=6,
        nuisance_scale=3.0, seed=seed)
    train = [(oid, world.observe(oid)) for oid in known
             for _ in range(train_per_object)]
    nnet, _ = recognition.train_embedding(train, catalog, epochs=epochs, lr=lr,
                                          momentum=momentum, seed=seed)
    knet, _ = recognition.train_knet(train, catalog, epochs=epochs, lr=lr,
                                     momentum=momentum, seed=seed,
                                     lam=aux_weight)

    def calibrate(model):
        validation = [(True, world.observe(oid)) for oid in known for _ in range(3)]
        validation += [(False, world.observe_center(world.unseen_center()))
                       for _ in range(3 * len(known))]
        return recognition.calibrate_k_threshold(model, catalog, validation)

    k_knet = calibrate(knet)
    k_nnet = calibrate(nnet)
    config = recognition.RecognitionConfig(k_knet, knet, nnet)
    rng = np.random.default_rng(seed + 1)
    cases = generate_benchmark_cases(known, novel, world.observe, n_cases, rng)

    def single(model, k):
        def pipeline(observed, candidate_ids):
            verdict = recognition.recollect(observed, model, catalog, k)
            return verdict, recognition.rank_candidates(observed, model,
                                                        catalog, candidate_ids)
        return pipeline

    def two_stage(observed, candidate_ids):
        return recognition.two_stage_match(observed, config, catalog, candidate_ids)

    return {
        "k_threshold": k_knet,
        "results": {
            "N-net": run_1v20_benchmark(cases, single(nnet, k_nnet), catalog.is_known),
            "K-net": run_1v20_benchmark(cases, single(knet, k_knet), catalog.is_known),
            "Two-stage K-net + N-net": run_1v20_benchmark(cases, two_stage,
                                                          catalog.is_known),
        },
    }


# --- labeled dataset on disk ----------------------------------------------------

@dataclass
class LabeledScene:
    scene_id: str
    frames: list[RgbdFrame]
    suction_mask: np.ndarray
    grasp_labels: list[GraspLabel]


@dataclass
class LabelDataset:
    root: Path
    bin_geometry: BinGeometry
    resolution: float
    scene_ids: list[str]

    def load_scene(self, scene_id: str) -> LabeledScene:
        scene_dir = self.root / "scenes" / scene_id
        stems = list_frames(scene_dir)
        if not stems:
            raise FileNotFoundError(f"{scene_dir}: no frames")
        frames = [load_frame(scene_dir, stem) for stem in stems]
        mask_path = scene_dir / "suction_labels.png"
        if not mask_path.exists():
            raise FileNotFoundError(mask_path)
        mask = load_suction_mask(mask_path)
        if mask.shape != frames[0].depth.shape:
            raise ValueError(f"{mask_path}: mask dimensions do not match frame")
        labels = load_grasp_labels(scene_dir / "grasp_labels.json")
        return LabeledScene(scene_id, frames, mask, labels)

    def split(self) -> tuple[list[str], list[str]]:
        """Deterministic 4:1 train/test split, keyed by a stable hash of the
        scene id so the assignment never depends on directory order."""
        ranked = sorted(self.scene_ids,
                        key=lambda s: hashlib.sha1(s.encode("utf-8")).hexdigest())
        n_train = math.ceil(len(ranked) * 4 / 5)
        return ranked[:n_train], ranked[n_train:]


def load_label_dataset(root) -> LabelDataset:
    root = Path(root)
    meta_path = root / "bin.json"
    if not meta_path.exists():
        raise FileNotFoundError(meta_path)
    with open(meta_path) as f:
        meta = json.load(f)
    bin_geom = BinGeometry(np.array(meta["origin"]), meta["x_extent"],
                           meta["y_extent"], meta.get("wall_margin", 0.05))
    scenes_dir = root / "scenes"
    if not scenes_dir.is_dir():
        raise FileNotFoundError(scenes_dir)
    scene_ids = sorted(p.name for p in scenes_dir.iterdir() if p.is_dir())
    return LabelDataset(root, bin_geom, float(meta.get("resolution", 0.002)), scene_ids)
