"""Depth-map surface evolution on synthetic stereo scenes.

Two experiments:

* a fronto-parallel textured plane initialized 10% too deep, recovered to
  sub-percent accuracy by registration-energy descent with isotropic
  regularization;
* a depth step, where the content-aware Lp regularizer and the isotropic
  umbrella reach comparable global accuracy but differ sharply inside the
  5-pixel band around the discontinuity.

Writes the refined depth rasters next to this script.
"""

from pathlib import Path

import numpy as np

from lpstereo.denoise import DenoiseConfig
from lpstereo.evolve import DepthMap, EvolveConfig, evolve
from lpstereo.fileio import write_depth
from lpstereo.synth import make_plane_stereo, make_step_stereo

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

print("=== plane recovery ===")
plane = make_plane_stereo(size=64, depth=4.0, disparity=4.0, seed=5)
init = DepthMap(plane.depth_true.depth * 1.10)
cfg = EvolveConfig(levels=1, iters_per_level=200, regularizer="isotropic")
refined, trace = evolve(plane.reference, plane.auxiliary, init, plane.cameras, cfg)
write_depth(out_dir / "plane_refined.f32", refined)
rmse0 = np.sqrt(np.mean((init.depth - plane.depth_true.depth) ** 2))
rmse1 = np.sqrt(np.mean((refined.depth - plane.depth_true.depth) ** 2))
print(f"depth rmse: {rmse0:.4f} -> {rmse1:.4f} "
      f"({rmse1 / 4.0:.2%} of true depth, {len(trace)} iterations)")
energies = [row["energy"] for row in trace]
print(f"registration energy: {energies[0]:.0f} -> {energies[-1]:.0f}")

print("\n=== step edge: content-aware vs isotropic ===")
step = make_step_stereo(size=64, depth_near=4.0, depth_far=5.0,
                        disparity=4.0, seed=5)
truth = step.depth_true.depth
step_init = DepthMap(truth * 1.10)
cx = int(round(step.cameras.reference.cx))
band = np.zeros((64, 64), dtype=bool)
band[:, cx - 5:cx + 6] = True

reg10 = DenoiseConfig(outer_iters=1, inner_iters=1, beta_growth=4.0, beta_span=10.0)
configs = {
    "content-aware Lp": EvolveConfig(levels=1, iters_per_level=200,
                                     regularizer="content_aware_lp",
                                     reg_config=reg10),
    "isotropic": EvolveConfig(levels=1, iters_per_level=200,
                              regularizer="isotropic"),
}
print(f"{'regularizer':>17} {'global rmse':>12} {'band rmse':>10}")
for name, config in configs.items():
    out, _ = evolve(step.reference, step.auxiliary, step_init, step.cameras, config)
    err = out.depth - truth
    write_depth(out_dir / f"step_{name.split()[0].replace('-', '_')}.f32", out)
    print(f"{name:>17} {np.sqrt(np.mean(err**2)):12.4f} "
          f"{np.sqrt(np.mean(err[band] ** 2)):10.4f}")
print("band = 5 pixels either side of the depth discontinuity")
