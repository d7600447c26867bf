"""Reconstruct the optimization landscapes of the mean-shift and score
distillation gradients on the two-class fractal mixture and compare their
maxima against the modes of the kernel-smoothed density.

Writes potential heatmaps under demos/out/landscape/.
"""

import os

import numpy as np

from modeseek import (GuidanceConfig, MixtureDenoiser, build_fractal,
                      find_local_maxima, landscape, make_schedule,
                      mixture_modes, VARIANCE_EXPLODING)
from modeseek.distill import msd_exact_gradient, sds_gradient
from modeseek.ppm import write_ppm


def main():
    outdir = os.path.join(os.path.dirname(__file__), "out", "landscape")
    os.makedirs(outdir, exist_ok=True)

    fractal = build_fractal()
    den = MixtureDenoiser(fractal)
    guidance = GuidanceConfig(mode="none")
    sched = make_schedule(VARIANCE_EXPLODING, 32, 0.002, 2.0)
    lam = 0.2
    res = 64
    cell = 3.0 / res
    modes = mixture_modes(fractal, lam=lam)
    print(f"{len(modes)} modes of the smoothed density")

    fields = {
        "msd": lambda pts, seed: msd_exact_gradient(den, pts, lam).grad,
        "sds": lambda pts, seed: -sds_gradient(den, guidance, sched, pts,
                                               1, seed).grad,
    }
    for name, field in fields.items():
        n_mc = 1 if name == "msd" else 64
        grid = landscape(field, extent=(-1.5, 1.5, -1.5, 1.5),
                         resolution=(res, res), n_mc_per_cell=n_mc, seed=0)
        maxima = find_local_maxima(grid)
        dists = [np.min(np.linalg.norm(modes - m, axis=1)) / cell
                 for m in maxima]
        print(f"{name}: {len(maxima)} maxima, residual={grid.residual:.2e}, "
              f"max mode distance = {max(dists):.1f} cells")
        write_ppm(os.path.join(outdir, f"{name}_potential.ppm"),
                  grid.potential)
    print(f"artifacts in {outdir}")


if __name__ == "__main__":
    main()
