"""End-to-end guarantees of the learned denoiser: held-out accuracy against
the analytic posterior mean, cross-package forward-pass agreement on the
golden vectors, and distillation sample quality when the core package drives
the trained net.
"""

import numpy as np
import pytest

from msd_trainer import (default_probes, export_goldens, read_goldens,
                         read_msdw, forward)


def _posterior_mean(pts, z, sigma):
    """Softmax-weighted average of the dataset under a Gaussian kernel."""
    d2 = np.sum((z[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    logw = -d2 / (2.0 * sigma[:, None] ** 2)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return w @ pts


def test_held_out_mse_against_posterior_mean(spiral_csv, spiral_weights):
    from msd_trainer import load_dataset_csv
    pts, _ = load_dataset_csv(spiral_csv)
    dims, w, b, emb = read_msdw(spiral_weights)
    rng = np.random.default_rng(77)
    n = 2000
    clean = pts[rng.integers(0, len(pts), n)]
    sigma = np.exp(rng.uniform(np.log(0.05), np.log(1.0), size=n))
    z = clean + sigma[:, None] * rng.standard_normal((n, 2))
    pred = forward(w, b, emb, z, sigma)
    ref = _posterior_mean(pts, z, sigma)
    mse = np.mean(np.sum((pred - ref) ** 2, axis=-1))
    assert mse < 5e-3


def test_core_forward_matches_goldens(tmp_path, spiral_weights):
    from modeseek import load_weights
    dims, w, b, emb = read_msdw(spiral_weights)
    path = tmp_path / "goldens.csv"
    export_goldens(path, w, b, emb, default_probes(emb))
    den = load_weights(spiral_weights)
    for z1, z2, sigma, cls, o1, o2 in read_goldens(path):
        out = den.denoise(np.array([z1, z2]), sigma, cls)
        assert abs(out[0] - o1) < 1e-5 and abs(out[1] - o2) < 1e-5


def test_distillation_with_learned_denoiser_ranks_methods(spiral_weights):
    from modeseek import (GuidanceConfig, build_spiral, load_weights,
                          make_schedule, nll, VARIANCE_PRESERVING)
    from modeseek.distill import BandwidthSchedule, OptConfig, distill_run

    den = load_weights(spiral_weights)
    sched = make_schedule(VARIANCE_PRESERVING, 32, 0.01, 0.995)
    xs = np.linspace(-1.5, 1.5, 32)
    gx, gy = np.meshgrid(xs, xs)
    init = np.stack([gx.ravel(), gy.ravel()], axis=1)
    bw = BandwidthSchedule(lambda0=0.316, lambda_min=0.01, total_steps=150)
    no_guide = GuidanceConfig(mode="none")
    msd_opt = OptConfig(steps=150, lr=0.08, n_mc=1, bandwidth=bw, stable=True,
                        inversion_anchor=False,
                        active_interval=(0, sched.num_steps - 1))
    msd = distill_run("msd", den, no_guide, sched, init, msd_opt, seed=0).theta
    sds_opt = OptConfig(steps=150, lr=0.08, n_mc=1, bandwidth=bw)
    sds = distill_run("sds", den, no_guide, sched, init, sds_opt, seed=0).theta
    spiral = build_spiral()
    assert nll(msd, spiral) < nll(sds, spiral)
    assert nll(msd, spiral) < 5.0
