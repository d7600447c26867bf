"""Monte Carlo efficiency of the gradient estimators (log10 of accuracy per
score-model invocation) on the fractal and spiral datasets.
"""

import numpy as np

from modeseek import (GuidanceConfig, IdealDenoiser, build_fractal,
                      build_spiral, density, efficiency, make_schedule,
                      sample, score, smoothed, VARIANCE_EXPLODING)
from modeseek.distill import msd_exact_gradient, sds_gradient, sdi_gradient


def probes_of(gmm, lam, n, seed=17):
    sm = smoothed(gmm, lam)
    rng = np.random.default_rng(seed)
    cand = rng.uniform(-1.5, 1.5, size=(50 * n, 2))
    mag = np.linalg.norm(score(sm, cand), axis=1) * density(sm, cand)
    return cand[mag > 1e-3 * mag.max()][:n]


def main():
    lam = 0.316
    guidance = GuidanceConfig(mode="none")
    sched = make_schedule(VARIANCE_EXPLODING, 32, 0.002, 2.0)
    print(f"{'dataset':<10}{'msd':>8}{'sds':>8}{'sdi':>8}")
    for name, build in (("fractal", build_fractal), ("spiral", build_spiral)):
        gmm = build()
        den = IdealDenoiser(sample(gmm, 2000, seed=0))
        probes = probes_of(gmm, lam, 16)

        def ref(x):
            return den.denoise(x, lam / np.sqrt(2.0)) - x

        def neg(g):
            return g.__class__(grad=-g.grad, cost=g.cost,
                               mc_samples=g.mc_samples)

        ests = {
            "msd": lambda x, s: msd_exact_gradient(den, x, lam),
            "sds": lambda x, s: neg(sds_gradient(den, guidance, sched, x, 1, s)),
            "sdi": lambda x, s: neg(sdi_gradient(den, guidance, sched, x, 1, s)),
        }
        row = {k: efficiency(est, probes, ref, trials=30, seed=0)
               for k, est in ests.items()}
        print(f"{name:<10}{row['msd']:>8.2f}{row['sds']:>8.2f}{row['sdi']:>8.2f}")


if __name__ == "__main__":
    main()
