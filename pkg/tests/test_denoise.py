import numpy as np
import pytest

from modeseek import (GuidanceConfig, IdealDenoiser, MixtureDenoiser,
                      CountingDenoiser, guided_eps, mean_shift_iterate,
                      eps_from_denoised, denoised_from_eps, sample, score,
                      smoothed, load_weights, save_weights,
                      make_autoguidance_reference, make_schedule,
                      VARIANCE_EXPLODING)
from modeseek.denoise import EmbeddingConfig, LearnedDenoiser


@pytest.fixture(scope="module")
def spiral_data(spiral):
    return sample(spiral, 2000, seed=0)


@pytest.fixture(scope="module")
def ideal(spiral_data):
    return IdealDenoiser(spiral_data)


# ---------------------------------------------------------------------------
# ideal denoiser


def test_ideal_denoiser_small_sigma_snaps_to_nearest(ideal, spiral_data):
    rng = np.random.default_rng(1)
    z = rng.uniform(-1.2, 1.2, size=(20, 2))
    out = ideal.denoise(z, 1e-4)
    d2 = np.sum((z[:, None, :] - spiral_data.points) ** 2, axis=-1)
    nearest = spiral_data.points[np.argmin(d2, axis=1)]
    assert np.allclose(out, nearest, atol=1e-8)


def test_ideal_denoiser_large_sigma_returns_data_mean(ideal, spiral_data):
    out = ideal.denoise(np.array([[0.3, -0.4]]), 1e4)
    assert np.allclose(out[0], spiral_data.points.mean(axis=0), atol=1e-6)


def test_ideal_denoiser_output_in_convex_hull(ideal, spiral_data):
    rng = np.random.default_rng(2)
    z = rng.uniform(-3, 3, size=(50, 2))
    out = ideal.denoise(z, 0.5)
    lo, hi = spiral_data.points.min(axis=0), spiral_data.points.max(axis=0)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_ideal_denoiser_rejects_nonpositive_sigma(ideal):
    with pytest.raises(ValueError):
        ideal.denoise(np.zeros((1, 2)), 0.0)


def test_ideal_denoiser_equals_mean_shift_iterate(ideal, spiral_data):
    # one denoiser evaluation at sigma = lam/sqrt(2) is exactly one classical
    # mean-shift step with the exp(-|v|^2/lam^2) kernel
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.5, 1.5, size=(200, 2))
    for lam in (0.05, 0.3, 1.0):
        a = ideal.denoise(x, lam / np.sqrt(2.0))
        b = mean_shift_iterate(x, spiral_data.points, lam)
        assert np.max(np.abs(a - b)) < 1e-12


def test_class_conditional_ideal_denoiser(fractal):
    ds = sample(fractal, 1000, seed=4)
    den = IdealDenoiser(ds)
    out = den.denoise(np.zeros((1, 2)), 1e-3, cls=0)
    pts0 = ds.points[ds.labels == 0]
    d2 = np.sum(pts0**2, axis=1)
    assert np.allclose(out[0], pts0[np.argmin(d2)], atol=1e-8)
    with pytest.raises(ValueError):
        den.denoise(np.zeros((1, 2)), 0.1, cls=9)


# ---------------------------------------------------------------------------
# analytic mixture denoiser


def test_mixture_denoiser_tweedie_identity(two_blob):
    # D(z) - z = sigma^2 * grad log p_sigma(z), p_sigma = density convolved
    # with N(0, sigma^2 I)
    den = MixtureDenoiser(two_blob)
    rng = np.random.default_rng(5)
    z = rng.uniform(-1.5, 1.5, size=(100, 2))
    for sig in (0.05, 0.3, 1.0):
        noisy = smoothed(two_blob, sig * np.sqrt(2.0))
        expected = z + sig**2 * score(noisy, z)
        assert np.max(np.abs(den.denoise(z, sig) - expected)) < 1e-10


def test_ideal_denoiser_converges_to_mixture_denoiser(single_gaussian):
    ds = sample(single_gaussian, 200_000, seed=6)
    ideal = IdealDenoiser(ds)
    analytic = MixtureDenoiser(single_gaussian)
    z = np.array([[0.2, -0.3], [0.5, 0.5]])
    assert np.allclose(ideal.denoise(z, 0.4), analytic.denoise(z, 0.4),
                       atol=5e-3)


def test_mixture_denoiser_per_point_sigma(two_blob):
    den = MixtureDenoiser(two_blob)
    z = np.array([[0.1, 0.2], [0.3, -0.1]])
    sig = np.array([0.1, 0.7])
    out = den.denoise(z, sig)
    assert np.allclose(out[0], den.denoise(z[:1], 0.1)[0])
    assert np.allclose(out[1], den.denoise(z[1:], 0.7)[0])


# ---------------------------------------------------------------------------
# eps conversions and guidance


def test_eps_denoised_roundtrip():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((10, 2))
    den = rng.standard_normal((10, 2))
    alpha = np.full(10, 0.8)
    sigma = np.full(10, 0.6)
    eps = eps_from_denoised(z, den, alpha, sigma)
    assert np.allclose(denoised_from_eps(z, eps, alpha, sigma), den, atol=1e-12)


def test_guided_eps_ve_matches_definition(ideal):
    sched = make_schedule(VARIANCE_EXPLODING, 8, 0.01, 1.0)
    g = GuidanceConfig(mode="none")
    z = np.array([[0.4, 0.1]])
    eps = guided_eps(g, ideal, sched, 3, z)
    a, s = 1.0, sched.sigma[3]
    assert np.allclose(eps, (z - ideal.denoise(z, s)) / s, atol=1e-12)


def test_cfg_scale_zero_equals_conditional(fractal):
    ds = sample(fractal, 500, seed=8)
    den = IdealDenoiser(ds)
    sched = make_schedule(VARIANCE_EXPLODING, 8, 0.01, 1.0)
    z = np.array([[0.1, -0.2]])
    e0 = guided_eps(GuidanceConfig(mode="none"), den, sched, 2, z, cls=1)
    e1 = guided_eps(GuidanceConfig(mode="cfg", scale=0.0), den, sched, 2, z, cls=1)
    assert np.allclose(e0, e1, atol=1e-12)


def test_cfg_requires_class(ideal):
    sched = make_schedule(VARIANCE_EXPLODING, 8, 0.01, 1.0)
    with pytest.raises(ValueError):
        guided_eps(GuidanceConfig(mode="cfg", scale=1.0), ideal, sched, 2,
                   np.zeros((1, 2)))


def test_guidance_config_validation(ideal):
    with pytest.raises(ValueError):
        GuidanceConfig(mode="bogus")
    with pytest.raises(ValueError):
        GuidanceConfig(mode="cfg", scale=-1.0)
    with pytest.raises(ValueError):
        GuidanceConfig(mode="autoguidance", scale=1.0)  # no reference
    assert GuidanceConfig(mode="none").evals_per_point == 1
    assert GuidanceConfig(mode="cfg", scale=1.0).evals_per_point == 2


def test_autoguidance_reference_is_subsample(spiral_data):
    ref = make_autoguidance_reference(spiral_data, seed=0, fraction=0.1)
    assert len(ref.points) == 200
    as_set = {tuple(p) for p in spiral_data.points}
    assert all(tuple(p) in as_set for p in ref.points)


def test_counting_denoiser(ideal):
    cd = CountingDenoiser(ideal)
    cd.denoise(np.zeros((7, 2)), 0.3)
    cd.denoise(np.zeros((3, 2)), 0.3)
    assert cd.calls == 10


# ---------------------------------------------------------------------------
# learned-denoiser weight format


def _random_learned(seed=0, fourier=4, hidden=8, classes=2):
    rng = np.random.default_rng(seed)
    emb = EmbeddingConfig(fourier_features=fourier, num_classes=classes)
    dims = [(emb.input_dim, hidden), (hidden, hidden), (hidden, 2)]
    ws = [rng.standard_normal(d[::-1]).astype(np.float32) * 0.3 for d in dims]
    bs = [rng.standard_normal(d[1]).astype(np.float32) * 0.1 for d in dims]
    return dims, ws, bs, emb


def test_weight_file_roundtrip(tmp_path):
    dims, ws, bs, emb = _random_learned()
    path = tmp_path / "model.msdw"
    save_weights(path, dims, ws, bs, emb)
    model = load_weights(path)
    rng = np.random.default_rng(1)
    z = rng.standard_normal((5, 2))
    ref = LearnedDenoiser(dims, ws, bs, emb)
    assert np.array_equal(model.denoise(z, 0.3, cls=1), ref.denoise(z, 0.3, cls=1))
    assert (tmp_path / "model.msdw.json").exists()


def test_weight_file_header_fuzz_rejected(tmp_path):
    dims, ws, bs, emb = _random_learned()
    path = tmp_path / "model.msdw"
    save_weights(path, dims, ws, bs, emb, sidecar=False)
    blob = bytearray(path.read_bytes())
    header_len = 4 + 8 + 8 * len(dims) + 16
    rejected = 0
    for off in range(header_len):
        mutated = bytearray(blob)
        mutated[off] ^= 0xFF
        mpath = tmp_path / f"mut{off}.msdw"
        mpath.write_bytes(bytes(mutated))
        try:
            load_weights(mpath)
        except ValueError:
            rejected += 1
    assert rejected == header_len


def test_weight_file_truncation_rejected(tmp_path):
    dims, ws, bs, emb = _random_learned()
    path = tmp_path / "model.msdw"
    save_weights(path, dims, ws, bs, emb, sidecar=False)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(ValueError):
        load_weights(path)


def test_skip_connection_identity(tmp_path):
    # zero weights + skip connection = identity map
    dims, ws, bs, emb = _random_learned()
    ws = [np.zeros_like(w) for w in ws]
    bs = [np.zeros_like(b) for b in bs]
    model = LearnedDenoiser(dims, ws, bs, emb)
    z = np.array([[0.4, -0.7]])
    assert np.allclose(model.denoise(z, 0.2), z, atol=1e-12)


def test_learned_denoiser_shape_validation():
    dims, ws, bs, emb = _random_learned()
    with pytest.raises(ValueError):
        LearnedDenoiser(dims, ws[:-1], bs, emb)
    bad = EmbeddingConfig(fourier_features=2, num_classes=2)
    with pytest.raises(ValueError):
        LearnedDenoiser(dims, ws, bs, bad)
