"""Denoiser evaluations: the closed-form ideal denoiser over a dataset,
a small learned MLP loaded from a binary weight file, and guidance wrappers.

All denoisers expose ``denoise(z, sigma, cls=None)`` operating on batched
points z of shape (..., 2); sigma may be a scalar or broadcastable array.
Evaluation is pure, so denoisers are safe for shared concurrent reads.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mixtures import Dataset

__all__ = [
    "IdealDenoiser", "MixtureDenoiser", "LearnedDenoiser", "GuidanceConfig",
    "CountingDenoiser",
    "ideal_denoise", "eps_from_denoised", "denoised_from_eps",
    "mean_shift_iterate", "guided_eps", "make_autoguidance_reference",
    "load_weights", "save_weights", "mlp_forward",
]

WEIGHT_MAGIC = b"MSDW"
WEIGHT_VERSION = 1
SKIP_CONNECTION_FLAG = 1


# ---------------------------------------------------------------------------
# ideal denoiser


class IdealDenoiser:
    """Bayes-optimal denoiser over a finite dataset.

    D(z; sigma) = sum_i u_i softmax_i(-|z - u_i|^2 / (2 sigma^2)), restricted
    to one class when requested.  The output is a convex combination of the
    data points, computed with log-sum-exp stabilization.
    """

    def __init__(self, dataset: Dataset):
        if len(dataset.points) < 1:
            raise ValueError("dataset must be nonempty")
        self.dataset = dataset
        self.points = dataset.points
        self._by_class = {}
        if dataset.labels is not None:
            for c in np.unique(dataset.labels):
                self._by_class[int(c)] = dataset.points[dataset.labels == c]

    def class_points(self, cls: Optional[int]) -> np.ndarray:
        if cls is None:
            return self.points
        if cls not in self._by_class:
            raise ValueError(f"unknown class index {cls}")
        return self._by_class[cls]

    def denoise(self, z, sigma, cls: Optional[int] = None) -> np.ndarray:
        pts = self.class_points(cls)
        z = np.asarray(z, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        # |z - u|^2 via the dot-product expansion keeps the (..., n) matrix
        # as a single BLAS product instead of a (..., n, 2) intermediate
        d2 = (np.square(z).sum(axis=-1)[..., None] + np.square(pts).sum(axis=-1)
              - 2.0 * (z @ pts.T))
        logw = -np.maximum(d2, 0.0) / (2.0 * sigma[..., None] ** 2)
        logw -= logw.max(axis=-1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=-1, keepdims=True)
        return w @ pts


def ideal_denoise(d: IdealDenoiser, z, sigma, cls: Optional[int] = None):
    """Functional form of :meth:`IdealDenoiser.denoise`."""
    return d.denoise(z, sigma, cls)


class MixtureDenoiser:
    """Exact posterior-mean denoiser for an analytic Gaussian mixture.

    With x ~ mixture and z = x + sigma * eps, the posterior is itself a
    mixture: component k is selected with probability proportional to
    w_k N(z; mu_k, Sigma_k + sigma^2 I) and contributes the linear estimate
    mu_k + Sigma_k (Sigma_k + sigma^2 I)^{-1} (z - mu_k).  Useful when the
    model density should be the true density rather than a point cloud.
    """

    def __init__(self, gmm):
        self.gmm = gmm

    def denoise(self, z, sigma, cls: Optional[int] = None) -> np.ndarray:
        from .mixtures import _component_log_pdfs, _select, smoothed
        g = _select(self.gmm, cls)
        z = np.asarray(z, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), z.shape[:-1])
        out = np.empty_like(z)
        # posterior quantities depend on sigma, so group identical values
        for s in np.unique(sigma):
            mask = sigma == s
            zz = z[mask]
            noisy = smoothed(g, float(s) * np.sqrt(2.0))  # adds s^2 I
            lp = _component_log_pdfs(noisy, zz) + np.log(g.weights)
            lp -= lp.max(axis=-1, keepdims=True)
            r = np.exp(lp)
            r /= r.sum(axis=-1, keepdims=True)
            gain = g.covariances @ np.linalg.inv(noisy.covariances)  # (K,2,2)
            d = zz[:, None, :] - g.means
            cond = g.means + np.einsum("kij,nkj->nki", gain, d)
            out[mask] = np.einsum("nk,nki->ni", r, cond)
        return out


def mean_shift_iterate(x, points: np.ndarray, lam: float) -> np.ndarray:
    """Classical discrete mean-shift iterate over a point set.

    x' = sum_i K(x - u_i) u_i / sum_i K(x - u_i) with K(v) = exp(-|v|^2/lam^2).
    Identical to the ideal denoiser at sigma = lam / sqrt(2).
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    x = np.asarray(x, dtype=float)
    d2 = np.square(x[..., None, :] - points).sum(axis=-1)
    logw = -d2 / lam**2
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)
    return w @ points


def eps_from_denoised(z, denoised, alpha, sigma):
    """Noise implied by a denoised point: (z - alpha * denoised) / sigma.

    alpha = 1 gives the VE convention (z - denoised) / sigma.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    alpha = np.asarray(alpha, dtype=float)
    return (np.asarray(z) - alpha[..., None] * np.asarray(denoised)) / sigma[..., None]


def denoised_from_eps(z, eps, alpha, sigma):
    """Exact inverse of :func:`eps_from_denoised`."""
    sigma = np.asarray(sigma, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return (np.asarray(z) - sigma[..., None] * np.asarray(eps)) / alpha[..., None]


# ---------------------------------------------------------------------------
# learned MLP denoiser (weights produced by the companion trainer package)


@dataclass(frozen=True)
class EmbeddingConfig:
    fourier_features: int
    num_classes: int
    flags: int = SKIP_CONNECTION_FLAG
    reserved: int = 0

    @property
    def skip_connection(self) -> bool:
        return bool(self.flags & SKIP_CONNECTION_FLAG)

    @property
    def input_dim(self) -> int:
        # [z, sin/cos Fourier features of log sigma, one-hot class + null slot]
        return 2 + 2 * self.fourier_features + self.num_classes + 1


class LearnedDenoiser:
    """MLP denoiser with SiLU hidden activations and an optional skip from z.

    Input features: z (2), Fourier embedding of log(sigma) with frequencies
    2^k for k < fourier_features, and a one-hot class vector with one extra
    "unconditional" slot used when cls is None.
    """

    def __init__(self, layer_dims, weights, biases, embedding: EmbeddingConfig):
        self.layer_dims = [tuple(d) for d in layer_dims]
        self.weights = [np.asarray(w, dtype=np.float32) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float32) for b in biases]
        self.embedding = embedding
        if len(self.weights) != len(self.layer_dims) or len(self.biases) != len(self.layer_dims):
            raise ValueError("weight/bias count must match layer count")
        for (din, dout), w, b in zip(self.layer_dims, self.weights, self.biases):
            if w.shape != (dout, din) or b.shape != (dout,):
                raise ValueError("weight file layer shape mismatch")
        if self.layer_dims[0][0] != embedding.input_dim:
            raise ValueError("first layer input dim inconsistent with embedding config")
        if self.layer_dims[-1][1] != 2:
            raise ValueError("final layer must output 2 coordinates")
        for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            if a[1] != b[0]:
                raise ValueError("layer dims do not chain")
        for w in self.weights + self.biases:
            if not np.all(np.isfinite(w)):
                raise ValueError("non-finite weights")

    def features(self, z, sigma, cls: Optional[int]) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), z.shape[:-1])
        u = np.log(sigma)
        freqs = 2.0 ** np.arange(self.embedding.fourier_features)
        ang = u[..., None] * freqs
        onehot = np.zeros(z.shape[:-1] + (self.embedding.num_classes + 1,))
        idx = self.embedding.num_classes if cls is None else int(cls)
        if not 0 <= idx <= self.embedding.num_classes:
            raise ValueError(f"unknown class index {cls}")
        onehot[..., idx] = 1.0
        return np.concatenate([z, np.sin(ang), np.cos(ang), onehot], axis=-1)

    def denoise(self, z, sigma, cls: Optional[int] = None) -> np.ndarray:
        h = self.features(z, sigma, cls)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = h @ w.T.astype(float) + b.astype(float)
            h = h * _sigmoid(h)  # SiLU
        out = h @ self.weights[-1].T.astype(float) + self.biases[-1].astype(float)
        if self.embedding.skip_connection:
            out = out + np.asarray(z, dtype=float)
        return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def mlp_forward(m: LearnedDenoiser, z, sigma, cls: Optional[int] = None):
    """Deterministic forward pass of the learned denoiser."""
    return m.denoise(z, sigma, cls)


def save_weights(path, layer_dims, weights, biases, embedding: EmbeddingConfig,
                 sidecar: bool = True):
    """Write the binary weight file (little-endian) plus a JSON sidecar.

    Layout: magic "MSDW", version u32, layer count u32, per-layer
    (in_dim u32, out_dim u32), embedding config as 4 u32 fields; payload is
    all weight matrices (row-major float32, layer order) then all biases.
    """
    header = bytearray(WEIGHT_MAGIC)
    header += struct.pack("<II", WEIGHT_VERSION, len(layer_dims))
    for din, dout in layer_dims:
        header += struct.pack("<II", din, dout)
    header += struct.pack("<IIII", embedding.fourier_features,
                          embedding.num_classes, embedding.flags,
                          embedding.reserved)
    with open(path, "wb") as f:
        f.write(bytes(header))
        for w in weights:
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        for b in biases:
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    if sidecar:
        meta = {
            "magic": WEIGHT_MAGIC.decode(),
            "version": WEIGHT_VERSION,
            "layers": [[int(a), int(b)] for a, b in layer_dims],
            "embedding": {
                "fourier_features": embedding.fourier_features,
                "num_classes": embedding.num_classes,
                "flags": embedding.flags,
                "reserved": embedding.reserved,
            },
        }
        with open(str(path) + ".json", "w") as f:
            json.dump(meta, f, indent=2)


def load_weights(path) -> LearnedDenoiser:
    """Load and validate a binary weight file; the binary header is authoritative."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != WEIGHT_MAGIC:
        raise ValueError("bad magic: not a weight file")
    off = 4
    version, n_layers = struct.unpack_from("<II", blob, off)
    off += 8
    if version != WEIGHT_VERSION:
        raise ValueError(f"unsupported weight format version {version}")
    if not 1 <= n_layers <= 64:
        raise ValueError(f"implausible layer count {n_layers}")
    dims = []
    for _ in range(n_layers):
        din, dout = struct.unpack_from("<II", blob, off)
        off += 8
        if din == 0 or dout == 0 or din > 65536 or dout > 65536:
            raise ValueError("implausible layer dimensions")
        dims.append((din, dout))
    emb = EmbeddingConfig(*struct.unpack_from("<IIII", blob, off))
    off += 16
    if emb.flags & ~SKIP_CONNECTION_FLAG:
        raise ValueError(f"unknown embedding flags {emb.flags:#x}")
    if emb.reserved != 0:
        raise ValueError("reserved header field must be zero")
    n_w = sum(a * b for a, b in dims)
    n_b = sum(b for _, b in dims)
    expected = off + 4 * (n_w + n_b)
    if len(blob) != expected:
        raise ValueError(f"payload size mismatch: {len(blob)} != {expected}")
    flat = np.frombuffer(blob, dtype="<f4", offset=off)
    weights, biases = [], []
    pos = 0
    for din, dout in dims:
        weights.append(flat[pos:pos + din * dout].reshape(dout, din))
        pos += din * dout
    for _, dout in dims:
        biases.append(flat[pos:pos + dout])
        pos += dout
    return LearnedDenoiser(dims, weights, biases, emb)


# ---------------------------------------------------------------------------
# guidance


@dataclass
class GuidanceConfig:
    """Guidance wrapper config: none, classifier-free, or autoguidance."""

    mode: str = "none"
    scale: float = 0.0
    reference: Optional[object] = None  # second denoiser, autoguidance only

    def __post_init__(self):
        if self.mode not in ("none", "cfg", "autoguidance"):
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.scale < 0:
            raise ValueError("guidance scale must be >= 0")
        if self.mode == "autoguidance" and self.reference is None:
            raise ValueError("autoguidance requires a reference denoiser")

    @property
    def evals_per_point(self) -> int:
        return 1 if self.mode == "none" else 2


def guided_eps(g: GuidanceConfig, primary, schedule, step: int, z,
               cls: Optional[int] = None, sigma=None, alpha=None):
    """Guided noise prediction at one grid step.

    none: conditional eps.  cfg: (1+w) eps_cond - w eps_uncond.  autoguidance:
    (1+w) eps_primary - w eps_reference, the reference being a degraded model
    evaluated at twice the noise level.  Pass sigma/alpha explicitly to
    override the schedule lookup (used for per-point noise levels).
    """
    if sigma is None or alpha is None:
        from .schedule import noise_at
        alpha, sigma = noise_at(schedule, step)
    alpha = np.asarray(alpha, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    # denoisers implement the z = x + sigma*eps convention; under a scaled
    # latent z = alpha*x + sigma*eps, evaluate them at (z/alpha, sigma/alpha)
    z_hat = np.asarray(z) / alpha[..., None]

    def eps_of(model, c, sig):
        return eps_from_denoised(z, model.denoise(z_hat, sig / alpha, c),
                                 alpha, sig)

    if g.mode == "none":
        return eps_of(primary, cls, sigma)
    w = g.scale
    if g.mode == "cfg":
        if cls is None:
            raise ValueError("cfg requires a class-conditional evaluation")
        return (1 + w) * eps_of(primary, cls, sigma) - w * eps_of(primary, None, sigma)
    # autoguidance: degraded reference at doubled noise level
    return (1 + w) * eps_of(primary, cls, sigma) - w * eps_of(g.reference, cls, 2 * sigma)


def make_autoguidance_reference(dataset: Dataset, seed: int = 0,
                                fraction: float = 0.1) -> IdealDenoiser:
    """Degraded denoiser: the ideal denoiser over a small subsample."""
    rng = np.random.default_rng(seed)
    n = max(1, int(round(fraction * len(dataset.points))))
    idx = rng.choice(len(dataset.points), size=n, replace=False)
    labels = None if dataset.labels is None else dataset.labels[idx]
    sub = Dataset(points=dataset.points[idx], labels=labels,
                  source=dataset.source, seed=seed)
    return IdealDenoiser(sub)


class CountingDenoiser:
    """Wrapper counting per-point denoiser invocations (audits cost reports)."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def denoise(self, z, sigma, cls: Optional[int] = None):
        z = np.asarray(z)
        self.calls += int(np.prod(z.shape[:-1])) if z.ndim > 1 else 1
        return self.inner.denoise(z, sigma, cls)
