#!/usr/bin/env python3
"""Generate a synthetic two-view scene directory for the CLI.

Writes frames, empty-bin reference frames, and bin.json in the layout the
`binpick affordance` command consumes:

    python3 scripts/make_demo_scene.py demo_scene --seed 3
    binpick affordance demo_scene --out demo_out
"""

import argparse
import json
from pathlib import Path

import numpy as np

from binpick.rgbd import save_frame
from binpick.synthetic import (default_intrinsics, nadir_camera,
                               random_graspable_scene, render_rgbd,
                               standard_bin)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--boxes", type=int, default=2)
    parser.add_argument("--resolution", type=float, default=0.002)
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bin_geom = standard_bin(0.3, 0.24)
    rng = np.random.default_rng(args.seed)
    objects = random_graspable_scene(rng, bin_geom, n_boxes=args.boxes,
                                     with_plate=True)
    intr = default_intrinsics(320, 240, focal=420.0)
    with open(out / "bin.json", "w") as f:
        json.dump({"origin": [0.0, 0.0, 0.0], "x_extent": bin_geom.x_extent,
                   "y_extent": bin_geom.y_extent,
                   "wall_margin": bin_geom.wall_margin,
                   "resolution": args.resolution}, f, indent=1)
    for i, offset in enumerate(((0.0, 0.0), (0.02, -0.015))):
        pose = nadir_camera(bin_geom, camera_height=0.7, offset_xy=offset)
        save_frame(out, i, render_rgbd(objects, bin_geom, intr, pose,
                                       sample_step=0.001))
        save_frame(out / "empty", i,
                   render_rgbd([], bin_geom, intr, pose, sample_step=0.001))
    print(f"wrote {len(objects)}-object scene with 2 views to {out}")


if __name__ == "__main__":
    main()
