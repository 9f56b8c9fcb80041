"""Content-aware Lp mesh denoising versus isotropic umbrella smoothing.

Corrupts a subdivided cube with Gaussian vertex noise, denoises it with the
adaptive Lp splitting solver, and compares against umbrella smoothing at
its closest achievable accuracy. The content-aware path cuts positional
error while keeping the crease angles sharp; the umbrella baseline rounds
the creases long before it reaches comparable accuracy.

Writes noisy/denoised meshes as OBJ next to this script.
"""

from pathlib import Path

import numpy as np

from lpstereo.denoise import DenoiseConfig, denoise, laplacian_smooth
from lpstereo.fileio import write_obj
from lpstereo.mesh import add_gaussian_noise, quality_report
from lpstereo.synth import make_cube

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

mesh, creases = make_cube(9)
sigma = 0.05 * mesh.mean_edge_length()
noisy = add_gaussian_noise(mesh, sigma, seed=7)
write_obj(out_dir / "cube_clean.obj", mesh)
write_obj(out_dir / "cube_noisy.obj", noisy)

rep0 = quality_report(noisy, mesh, creases)
print(f"noisy input : rmse {rep0.vertex_rmse:.5f}, "
      f"crease error {rep0.mean_dihedral_error_deg:.2f} deg")

result, params, diag = denoise(noisy, DenoiseConfig())
write_obj(out_dir / "cube_denoised.obj", result)
rep1 = quality_report(result, mesh, creases)
print(f"denoised    : rmse {rep1.vertex_rmse:.5f} "
      f"({1 - rep1.vertex_rmse / rep0.vertex_rmse:.0%} lower), "
      f"crease error {rep1.mean_dihedral_error_deg:.2f} deg")
print(f"fitted model: p = {params.p}, theta = {params.theta:.1f}, "
      f"sigma = {params.sigma:.5f}, lambda = {params.lam:.2e}; "
      f"{len(diag)} splitting sweeps")

print("\numbrella smoothing frontier (tau = 0.1):")
cur = noisy
steps = 0
for target in (1, 2, 4, 8):
    while steps < target:
        cur = laplacian_smooth(cur, tau=0.1, iters=1)
        steps += 1
    rep = quality_report(cur, mesh, creases)
    print(f"  {target:2d} iterations: rmse {rep.vertex_rmse:.5f}, "
          f"crease error {rep.mean_dihedral_error_deg:.2f} deg")

print("\nper-sweep objective trace (first beta stage):")
first_beta = diag[0]["beta"]
for row in [r for r in diag if r["beta"] == first_beta][:4]:
    print(f"  outer {row['outer']} beta {row['beta']:.3f}: "
          f"objective {row['objective']:.6f}")
