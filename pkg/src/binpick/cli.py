"""Command-line pipelines: affordance inference, benchmark evaluation,
simulated stow episodes, and recognition training/benchmarking.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import affordance, evaluation, heightmap, planner, recognition, rgbd
from .heightmap import BinGeometry, RotationSet
from .planner import PlannerConfig, PrimitiveKind
from .synthetic import standard_bin


class InputError(Exception):
    """Bad input from the user (exit code 2)."""


def _load_bin_config(path) -> tuple[BinGeometry, float]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing bin geometry file {path}")
    with open(path) as f:
        meta = json.load(f)
    geom = BinGeometry(np.array(meta["origin"]), meta["x_extent"], meta["y_extent"],
                       meta.get("wall_margin", 0.05))
    return geom, float(meta.get("resolution", 0.002))


def _scene_frames(scene_dir: Path) -> list[rgbd.RgbdFrame]:
    stems = rgbd.list_frames(scene_dir)
    if not stems:
        raise InputError(f"no frames found in {scene_dir}")
    return [rgbd.load_frame(scene_dir, stem) for stem in stems]


def _scene_pipeline(scene_dir: Path, bin_geom: BinGeometry, resolution: float,
                    normals_radius: float = 0.01):
    """Frames -> filled clouds with normals, fused heightmap, foreground masks."""
    frames = [rgbd.fill_depth_holes(f) for f in _scene_frames(scene_dir)]
    empty_dir = scene_dir / "empty"
    empties = None
    if empty_dir.is_dir():
        empties = [rgbd.fill_depth_holes(f) for f in _scene_frames(empty_dir)]
        if len(empties) != len(frames):
            raise InputError("empty/ must contain one frame per scene frame")

    clouds = [rgbd.project_to_cloud(f, i) for i, f in enumerate(frames)]
    cloud = rgbd.concat_clouds(clouds)
    cloud = rgbd.estimate_normals(cloud, radius=normals_radius)

    fg_points = None
    if empties is not None:
        masks = {i: rgbd.background_subtract(frames[i], empties[i])
                 for i in range(len(frames))}
        fg_points = affordance.points_in_foreground(cloud, masks)

    hm = heightmap.build_heightmap(clouds, bin_geom, resolution)
    if empties is not None:
        empty_clouds = [rgbd.project_to_cloud(f, i) for i, f in enumerate(empties)]
        empty_hm = heightmap.build_heightmap(empty_clouds, bin_geom, resolution)
        fg_hm = heightmap.heightmap_foreground(hm, empty_hm)
    else:
        fg_hm = heightmap.heightmap_foreground(hm)
    hm = heightmap.fill_missing_heights(hm, foreground=fg_hm)
    return frames, cloud, fg_points, hm, fg_hm


def _suction_maps_from_cloud(frames, cloud, values) -> list[np.ndarray]:
    """Scatter per-point affordances back onto each frame's pixel grid."""
    maps = []
    for i, frame in enumerate(frames):
        img = np.zeros(frame.depth.shape)
        sel = cloud.source_pixel[:, 0] == i
        rows = cloud.source_pixel[sel, 1]
        cols = cloud.source_pixel[sel, 2]
        img[rows, cols] = values[sel]
        maps.append(img)
    return maps


def _proposal_json(suction_props, grasp_props, limit: int = 200) -> dict:
    return {
        "suction": [{
            "point": [float(x) for x in p.point],
            "normal": [float(x) for x in p.normal],
            "affordance": p.affordance,
            "primitive": p.primitive.value,
        } for p in suction_props[:limit]],
        "grasp": [{
            "midpoint": [float(x) for x in p.midpoint],
            "angle": p.angle,
            "width": p.width,
            "affordance": p.affordance,
            "primitive": p.primitive.value,
            "pixel": list(p.pixel),
        } for p in grasp_props[:limit]],
    }


def _affordance_stage(method: str, scene_dir: Path, frames, cloud, hm,
                      rotations: RotationSet):
    """Per-point suction affordances + per-angle grasp maps, from the
    baselines or from learned .affd files under scene_dir/learned/."""
    if method == "baseline":
        return affordance.suction_baseline(cloud), affordance.grasp_baseline(hm, rotations)
    learned_dir = scene_dir / "learned"
    if not learned_dir.is_dir():
        raise InputError(f"--method learned needs {learned_dir}")
    suction_files = sorted(learned_dir.glob("suction_*.affd"))
    if len(suction_files) != len(frames):
        raise InputError("need one learned suction map per frame")
    per_frame = [affordance.load_learned_map(p, frames[i].depth.shape)
                 for i, p in enumerate(suction_files)]
    suction_values = np.zeros(len(cloud))
    for i, amap in enumerate(per_frame):
        sel = cloud.source_pixel[:, 0] == i
        suction_values[sel] = amap.values[cloud.source_pixel[sel, 1],
                                          cloud.source_pixel[sel, 2]]
    grasp_files = sorted(learned_dir.glob("grasp_*.affd"))
    if len(grasp_files) != rotations.n:
        raise InputError(f"need {rotations.n} learned grasp maps")
    grasp_maps = [affordance.load_learned_map(p, hm.shape) for p in grasp_files]
    return suction_values, grasp_maps


def cmd_affordance(args) -> int:
    scene_dir = Path(args.scene_dir)
    if not scene_dir.is_dir():
        raise InputError(f"scene directory {scene_dir} does not exist")
    bin_geom, resolution = _load_bin_config(scene_dir / "bin.json")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    frames, cloud, fg_points, hm, fg_hm = _scene_pipeline(scene_dir, bin_geom, resolution)
    rotations = RotationSet(args.angles)
    suction_values, grasp_maps = _affordance_stage(args.method, scene_dir,
                                                   frames, cloud, hm, rotations)

    suction_props = affordance.make_suction_proposals(cloud, suction_values, fg_points)
    grasp_props = affordance.make_grasp_proposals(hm, grasp_maps, bin_geom,
                                                  foreground=fg_hm,
                                                  limit=args.proposal_limit)

    for i, img in enumerate(_suction_maps_from_cloud(frames, cloud, suction_values)):
        affordance.save_affordance_map(
            out / f"suction_{i:03d}.affd",
            affordance.AffordanceMap(np.clip(img, 0, 1), "suction", source=args.method
                                     if args.method == "baseline" else "learned-file"))
    for i, amap in enumerate(grasp_maps):
        affordance.save_affordance_map(out / f"grasp_{i:03d}.affd", amap)
    with open(out / "proposals.json", "w") as f:
        json.dump(_proposal_json(suction_props, grasp_props), f, indent=1, sort_keys=True)
    print(f"wrote {len(frames)} suction maps, {rotations.n} grasp maps, "
          f"{len(suction_props)} suction / {len(grasp_props)} grasp proposals to {out}")
    return 0


def cmd_evaluate(args) -> int:
    root = Path(args.dataset_root)
    if not root.is_dir():
        raise InputError(f"dataset root {root} does not exist")
    dataset = evaluation.load_label_dataset(root)
    _, test_ids = dataset.split()
    if not test_ids:
        raise InputError("dataset has no test scenes")
    rotations = RotationSet(args.angles)

    rows = {"suction": [], "grasp": []}
    for scene_id in test_ids:
        scene = dataset.load_scene(scene_id)
        scene_dir = dataset.root / "scenes" / scene_id
        frames, cloud, fg_points, hm, fg_hm = _scene_pipeline(
            scene_dir, dataset.bin_geometry, dataset.resolution)
        suction_values, grasp_maps = _affordance_stage(
            args.method, scene_dir, frames, cloud, hm, rotations)
        suction_props = affordance.make_suction_proposals(cloud, suction_values, fg_points)
        grasp_props = affordance.make_grasp_proposals(hm, grasp_maps,
                                                      foreground=fg_hm)
        rows["suction"].append(
            evaluation.precision_table(suction_props, scene.suction_mask, "suction"))
        rows["grasp"].append(
            evaluation.precision_table(grasp_props, scene.grasp_labels, "grasp"))

    def aggregate(tables):
        out = {}
        for key in ("top1", "top1pct", "top5pct", "top10pct"):
            defined = [t[key] for t in tables if t[key] is not None]
            out[key] = (sum(defined) / len(defined)) if defined else None
        return out

    table = {"method": args.method, "scenes": len(test_ids),
             "suction": aggregate(rows["suction"]), "grasp": aggregate(rows["grasp"])}
    _print_precision_table(table)
    if args.out:
        with open(args.out, "w") as f:
            json.dump(table, f, indent=1, sort_keys=True)
    return 0


def _print_precision_table(table: dict) -> None:
    def fmt(v):
        return "    --" if v is None else f"{100.0 * v:6.1f}"
    print(f"{'Primitive':<10} {'Method':<10} {'Top-1':>7} {'Top-1%':>7} "
          f"{'Top-5%':>7} {'Top-10%':>8}")
    for prim in ("suction", "grasp"):
        row = table[prim]
        print(f"{prim:<10} {table['method']:<10} {fmt(row['top1'])} "
              f"{fmt(row['top1pct'])} {fmt(row['top5pct'])} {fmt(row['top10pct']):>8}")


def _planner_config_from_args(args) -> PlannerConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"missing planner config {path}")
        with open(path) as f:
            return PlannerConfig.from_json_dict(json.load(f))
    gamma = {PrimitiveKind.SUCTION_DOWN: args.gamma_sd,
             PrimitiveKind.SUCTION_SIDE: args.gamma_ss,
             PrimitiveKind.GRASP_DOWN: args.gamma_gd,
             PrimitiveKind.FLUSH_GRASP: args.gamma_fg}
    return PlannerConfig(gamma=gamma,
                         suction_first_window=args.suction_first_window,
                         suppression_radius=args.suppression_radius,
                         speed_pick_spacing=args.speed_pick_spacing,
                         failure_window=args.failure_window)


def _random_sim_bin(n_objects: int, seed: int) -> planner.SimulatedBin:
    rng = np.random.default_rng(seed)
    bin_geom = standard_bin()
    objects = []
    for i in range(n_objects):
        pos = np.array([rng.uniform(0.05, bin_geom.x_extent - 0.05),
                        rng.uniform(0.05, bin_geom.y_extent - 0.05),
                        rng.uniform(0.02, 0.08)])
        affs = {kind: float(rng.uniform(0.3, 0.95)) for kind in PrimitiveKind}
        objects.append(planner.SimObject(f"obj{i:03d}", pos, affs))
    return planner.SimulatedBin(objects)


def cmd_stow(args) -> int:
    cfg = _planner_config_from_args(args)
    scene = _random_sim_bin(args.objects, args.seed)
    log = planner.run_stow_episode(scene, cfg, planner.logistic_success_model(),
                                   time_limit=args.time_limit, seed=args.seed)
    if args.out:
        planner.write_episode_log(args.out, log)
    summary = planner.pick_success_summary(log)
    for mode in ("suction", "grasping"):
        row = summary[mode]
        rate = "n/a" if row["rate"] is None else f"{100.0 * row['rate']:.1f}%"
        print(f"{rate} pick success with {mode} "
              f"({row['successes']}/{row['attempts']} attempts)")
    picked = [r for r in log if r["event"] == "summary"][-1]
    print(f"stowed {picked['picked']} of {args.objects} objects "
          f"in {picked['time']:.0f} s simulated")
    return 0


def cmd_recognize(args) -> int:
    if args.features or args.catalog:
        return _recognize_from_files(args)
    table = evaluation.run_synthetic_1v20(
        seed=args.seed, n_objects=args.objects_total, n_cases=args.cases,
        d=args.dims, epochs=args.epochs, lr=args.lr, aux_weight=args.aux_weight,
        train_per_object=args.train_per_object)
    _print_recognition_table(table["results"])
    if args.out:
        with open(args.out, "w") as f:
            json.dump(table, f, indent=1, sort_keys=True)
    return 0


def _recognize_from_files(args) -> int:
    if not (args.features and args.catalog):
        raise InputError("--features and --catalog must be given together")
    catalog_dir = Path(args.catalog)
    features_dir = Path(args.features)
    if not catalog_dir.is_dir() or not features_dir.is_dir():
        raise InputError("feature/catalog directories do not exist")
    catalog = recognition.ProductCatalog()
    for path in sorted(catalog_dir.glob("*.feat")):
        known = path.stem.startswith("known")
        for fv in recognition.load_feature_vectors(path, "product"):
            catalog.add(fv.object_id, fv.values, known=known)
    if len(catalog.known_ids()) < 2:
        raise InputError("catalog needs at least 2 known objects "
                         "(files named known*.feat)")
    observed = []
    for path in sorted(features_dir.glob("*.feat")):
        observed.extend(recognition.load_feature_vectors(path, "observed"))
    train = [(fv.object_id, fv.values) for fv in observed
             if catalog.is_known(fv.object_id)]
    if not train:
        raise InputError("no observed features of known objects to train on")
    nnet, _ = recognition.train_embedding(train, catalog, epochs=args.epochs,
                                          lr=args.lr, seed=args.seed)
    knet, _ = recognition.train_knet(train, catalog, epochs=args.epochs,
                                     lr=args.lr, seed=args.seed, lam=args.aux_weight)
    out = Path(args.out or "models")
    out.mkdir(parents=True, exist_ok=True)
    recognition.save_model(out / "nnet.embd", nnet)
    recognition.save_model(out / "knet.embd", knet)
    print(f"trained on {len(train)} observed samples of "
          f"{len(catalog.known_ids())} known objects; models in {out}")
    return 0


def _print_recognition_table(results: dict) -> None:
    def fmt(v):
        return "   --" if v is None else f"{v:5.1f}"
    print(f"{'Method':<26} {'K vs N':>7} {'Known':>7} {'Novel':>7} {'Mixed':>7}")
    for method, row in results.items():
        print(f"{method:<26} {fmt(row['k_vs_n']):>7} {fmt(row['known']):>7} "
              f"{fmt(row['novel']):>7} {fmt(row['mixed']):>7}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="binpick",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("affordance", help="compute affordance maps and proposals")
    p.add_argument("scene_dir")
    p.add_argument("--method", choices=["baseline", "learned"], default="baseline")
    p.add_argument("--out", required=True)
    p.add_argument("--angles", type=int, default=16)
    p.add_argument("--proposal-limit", type=int, default=500)
    p.set_defaults(func=cmd_affordance)

    p = sub.add_parser("evaluate", help="precision-at-percentile benchmark")
    p.add_argument("dataset_root")
    p.add_argument("--method", choices=["baseline", "learned"], default="baseline")
    p.add_argument("--angles", type=int, default=16)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stow", help="run a simulated stow episode")
    p.add_argument("--objects", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=float, default=900.0)
    p.add_argument("--config", help="planner config JSON (overrides flags)")
    p.add_argument("--out", help="episode log path (JSON lines)")
    p.add_argument("--gamma-sd", type=float, default=1.0)
    p.add_argument("--gamma-ss", type=float, default=1.0)
    p.add_argument("--gamma-gd", type=float, default=1.0)
    p.add_argument("--gamma-fg", type=float, default=1.0)
    p.add_argument("--suction-first-window", type=float, default=180.0)
    p.add_argument("--suppression-radius", type=float, default=0.02)
    p.add_argument("--speed-pick-spacing", type=float, default=0.03)
    p.add_argument("--failure-window", type=float, default=180.0)
    p.set_defaults(func=cmd_stow)

    p = sub.add_parser("recognize", help="train models / run the 1-vs-20 benchmark")
    p.add_argument("--features", help="directory of observed .feat files")
    p.add_argument("--catalog", help="directory of product .feat files")
    p.add_argument("--train", action="store_true",
                   help="train and save models (file mode)")
    p.add_argument("--bench", action="store_true",
                   help="run the synthetic benchmark (default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--aux-weight", type=float, default=2.5)
    p.add_argument("--dims", type=int, default=32)
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--objects-total", type=int, default=40)
    p.add_argument("--train-per-object", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_recognize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
