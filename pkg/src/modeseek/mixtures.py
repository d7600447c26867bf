"""Analytic 2D toy densities as Gaussian mixtures.

Builders for the fractal-like two-class mixture, the spiral, and the
pinwheel, plus exact density / log-density / score evaluation, Gaussian
kernel smoothing, and seeded sampling.

Kernel convention used throughout the package: the radial Gaussian kernel
with bandwidth `lam` is  K(x) ∝ exp(-|x|^2 / lam^2),  i.e. its covariance is
(lam^2 / 2) * I.  Smoothing a mixture with this kernel adds lam^2/2 to every
covariance diagonal.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "GaussianMixture", "Dataset",
    "build_fractal", "build_spiral", "build_pinwheel",
    "sample", "density", "log_density", "score", "smoothed", "conditional",
    "product_mixture",
    "mixture_to_csv", "mixture_from_csv", "dataset_to_csv", "dataset_from_csv",
]


@dataclass(frozen=True)
class GaussianMixture:
    """Weights (K,), means (K, 2), covariances (K, 2, 2), optional labels (K,)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        c = np.asarray(self.covariances, dtype=float)
        if w.ndim != 1 or m.shape != (len(w), 2) or c.shape != (len(w), 2, 2):
            raise ValueError("inconsistent mixture shapes")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        asym = np.max(np.abs(c - np.swapaxes(c, 1, 2)))
        if asym > 1e-12 * max(np.max(np.abs(c)), 1e-30):
            raise ValueError("covariances must be symmetric")
        c = 0.5 * (c + np.swapaxes(c, 1, 2))
        eigs = np.linalg.eigvalsh(c)
        if np.any(eigs <= 0):
            raise ValueError("covariances must be positive definite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int)
            if lab.shape != (len(w),):
                raise ValueError("labels must have one entry per component")
            object.__setattr__(self, "labels", lab)

    @property
    def num_components(self) -> int:
        return len(self.weights)

    @property
    def classes(self) -> np.ndarray:
        if self.labels is None:
            return np.empty(0, dtype=int)
        return np.unique(self.labels)


@dataclass(frozen=True)
class Dataset:
    """Points (n, 2) drawn from a source mixture, with the seed that made them."""

    points: np.ndarray
    labels: Optional[np.ndarray]
    source: GaussianMixture
    seed: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
            raise ValueError("points must be a nonempty (n, 2) array")
        object.__setattr__(self, "points", pts)
        if self.labels is not None and len(self.labels) != len(pts):
            raise ValueError("labels must match points in length")


def conditional(gmm: GaussianMixture, cls: int) -> GaussianMixture:
    """Renormalized sub-mixture for one class."""
    if gmm.labels is None:
        raise ValueError("mixture has no class labels")
    mask = gmm.labels == cls
    if not np.any(mask):
        raise ValueError(f"unknown class index {cls}")
    w = gmm.weights[mask]
    return GaussianMixture(w / w.sum(), gmm.means[mask], gmm.covariances[mask],
                           gmm.labels[mask])


def class_prior(gmm: GaussianMixture, cls: int) -> float:
    if gmm.labels is None:
        raise ValueError("mixture has no class labels")
    return float(gmm.weights[gmm.labels == cls].sum())


# ---------------------------------------------------------------------------
# builders


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def build_fractal(depth: int = 5, branch_factor: int = 2,
                  anisotropy: float = 20.0, seed: int = 0) -> GaussianMixture:
    """Two-class mixture of anisotropic Gaussians arranged by recursive branching.

    Each class grows a tree of segments: every level spawns `branch_factor`
    children per segment, rotated by +-(35 deg + jitter) and scaled by 0.55.
    Leaf segments become components elongated along the branch direction with
    covariance condition number anisotropy^2.  b^depth components per class.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if branch_factor < 2:
        raise ValueError("branch_factor must be >= 2")
    if anisotropy < 1:
        raise ValueError("anisotropy must be >= 1")
    rng = np.random.default_rng(seed)

    means, covs, labels = [], [], []
    base_len = 0.9
    for cls, root_angle in ((0, np.pi / 2), (1, -np.pi / 2)):
        # (position, direction angle, length) of live segments
        segs = [(np.zeros(2), root_angle, base_len)]
        for level in range(depth):
            nxt = []
            for pos, ang, length in segs:
                for j in range(branch_factor):
                    # fan children symmetrically around the parent direction
                    spread = 35.0 + rng.uniform(-5.0, 5.0)
                    frac = (2 * j - (branch_factor - 1)) / max(branch_factor - 1, 1)
                    child_ang = ang + np.deg2rad(spread) * frac
                    child_len = 0.55 * length
                    child_pos = pos + child_len * np.array(
                        [np.cos(child_ang), np.sin(child_ang)])
                    nxt.append((child_pos, child_ang, child_len))
            segs = nxt
        for pos, ang, length in segs:
            mid = pos - 0.5 * length * np.array([np.cos(ang), np.sin(ang)])
            s_long = 0.45 * length
            s_short = s_long / anisotropy
            R = _rot(ang)
            covs.append(R @ np.diag([s_long**2, s_short**2]) @ R.T)
            means.append(mid)
            labels.append(cls)

    means = np.array(means)
    covs = np.array(covs)
    # fit inside [-1.5, 1.5]^2
    extent = np.abs(means).max() + 3 * np.sqrt(np.max(np.linalg.eigvalsh(covs)))
    scale = 1.4 / extent
    means *= scale
    covs *= scale**2
    k = len(means)
    return GaussianMixture(np.full(k, 1.0 / k), means, covs, np.array(labels))


def build_spiral(num_components: int = 100, turns: float = 2.0,
                 noise: float = 0.02) -> GaussianMixture:
    """Isotropic components along an Archimedean spiral r = a * theta."""
    if num_components < 1:
        raise ValueError("num_components must be >= 1")
    if turns <= 0 or noise <= 0:
        raise ValueError("turns and noise must be positive")
    theta_max = 2 * np.pi * turns
    # start slightly off-center so the innermost component has positive radius
    theta = np.linspace(0.35, theta_max, num_components)
    a = 1.2 / theta_max
    r = a * theta
    means = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    covs = np.tile(noise**2 * np.eye(2), (num_components, 1, 1))
    w = np.full(num_components, 1.0 / num_components)
    return GaussianMixture(w, means, covs)


def build_pinwheel(num_blades: int = 5, points_per_blade: int = 20,
                   twist: float = 0.35) -> GaussianMixture:
    """Radially stretched blades whose angle advances with radius (twist)."""
    if num_blades < 1 or points_per_blade < 1:
        raise ValueError("num_blades and points_per_blade must be >= 1")
    means, covs = [], []
    radii = np.linspace(0.25, 1.2, points_per_blade)
    dr = (radii[-1] - radii[0]) / max(points_per_blade - 1, 1) if points_per_blade > 1 else 0.2
    for b in range(num_blades):
        base = 2 * np.pi * b / num_blades
        for rr in radii:
            ang = base + twist * rr**2
            means.append([rr * np.cos(ang), rr * np.sin(ang)])
            s_rad = max(0.6 * dr, 0.02)
            s_tan = 0.03 * (0.5 + rr)
            R = _rot(ang)
            covs.append(R @ np.diag([s_rad**2, s_tan**2]) @ R.T)
    k = len(means)
    return GaussianMixture(np.full(k, 1.0 / k), np.array(means), np.array(covs))


# ---------------------------------------------------------------------------
# evaluation


def _component_log_pdfs(gmm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """log N(x; mu_k, Sigma_k) for every component; x (..., 2) -> (..., K)."""
    d = x[..., None, :] - gmm.means  # (..., K, 2)
    inv = np.linalg.inv(gmm.covariances)  # (K, 2, 2)
    _, logdet = np.linalg.slogdet(gmm.covariances)
    quad = np.einsum("...ki,kij,...kj->...k", d, inv, d)
    return -0.5 * (quad + logdet + 2 * np.log(2 * np.pi))


def _select(gmm: GaussianMixture, cls: Optional[int]) -> GaussianMixture:
    return gmm if cls is None else conditional(gmm, cls)


def log_density(gmm: GaussianMixture, x, cls: Optional[int] = None):
    """Exact mixture log-density via log-sum-exp; x (..., 2)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input point")
    g = _select(gmm, cls)
    lp = _component_log_pdfs(g, x) + np.log(g.weights)
    m = lp.max(axis=-1)
    out = m + np.log(np.exp(lp - m[..., None]).sum(axis=-1))
    return out if out.ndim else float(out)


def density(gmm: GaussianMixture, x, cls: Optional[int] = None):
    return np.exp(log_density(gmm, x, cls))


def score(gmm: GaussianMixture, x, cls: Optional[int] = None):
    """Gradient of log-density: responsibility-weighted component scores."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input point")
    g = _select(gmm, cls)
    lp = _component_log_pdfs(g, x) + np.log(g.weights)
    m = lp.max(axis=-1, keepdims=True)
    r = np.exp(lp - m)
    r /= r.sum(axis=-1, keepdims=True)  # responsibilities (..., K)
    inv = np.linalg.inv(g.covariances)
    d = g.means - x[..., None, :]  # (..., K, 2)
    comp_scores = np.einsum("kij,...kj->...ki", inv, d)
    return np.einsum("...k,...ki->...i", r, comp_scores)


def smoothed(gmm: GaussianMixture, lam: float) -> GaussianMixture:
    """Exact convolution with the kernel exp(-|x|^2/lam^2): add lam^2/2 * I."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    covs = gmm.covariances + (lam**2 / 2.0) * np.eye(2)
    return GaussianMixture(gmm.weights, gmm.means, covs, gmm.labels)


def product_mixture(gmm: GaussianMixture, anchor, lam: float) -> GaussianMixture:
    """Closed-form normalized product of a mixture with the Gaussian kernel
    exp(-|x - anchor|^2 / lam^2) centered at the anchor.

    Component k picks up weight w_k * N(anchor; mu_k, Sigma_k + (lam^2/2) I)
    and precision Sigma_k^{-1} + (2/lam^2) I.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    a = np.asarray(anchor, dtype=float)
    lamp2 = lam**2 / 2.0
    kcov = gmm.covariances + lamp2 * np.eye(2)
    inv = np.linalg.inv(kcov)
    d = a - gmm.means
    _, logdet = np.linalg.slogdet(kcov)
    logw = (np.log(gmm.weights)
            - 0.5 * (np.einsum("ki,kij,kj->k", d, inv, d) + logdet))
    logw -= logw.max()
    w = np.exp(logw)
    # posterior mean/cov of each component given the kernel "observation"
    prec = np.linalg.inv(gmm.covariances) + np.eye(2) / lamp2
    covs = np.linalg.inv(prec)
    rhs = np.einsum("kij,kj->ki", np.linalg.inv(gmm.covariances), gmm.means) + a / lamp2
    means = np.einsum("kij,kj->ki", covs, rhs)
    return GaussianMixture(w / w.sum(), means, covs, gmm.labels)


def sample(gmm: GaussianMixture, n: int, seed: int,
           cls: Optional[int] = None) -> Dataset:
    """Draw n i.i.d. points from the (class-conditional) mixture."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = _select(gmm, cls)
    rng = np.random.default_rng(seed)
    comp = rng.choice(g.num_components, size=n, p=g.weights)
    chol = np.linalg.cholesky(g.covariances)  # (K, 2, 2)
    eps = rng.standard_normal((n, 2))
    pts = g.means[comp] + np.einsum("nij,nj->ni", chol[comp], eps)
    labels = None
    if cls is not None:
        labels = np.full(n, cls, dtype=int)
    elif g.labels is not None:
        labels = g.labels[comp]
    return Dataset(points=pts, labels=labels, source=gmm, seed=seed)


# ---------------------------------------------------------------------------
# CSV serialization (one row per component / per point)


def mixture_to_csv(gmm: GaussianMixture, path):
    with open(path, "w") as f:
        f.write("weight,mean_x,mean_y,cov_xx,cov_xy,cov_yy,label\n")
        for k in range(gmm.num_components):
            c = gmm.covariances[k]
            lab = "" if gmm.labels is None else str(int(gmm.labels[k]))
            f.write(f"{gmm.weights[k]:.17g},{gmm.means[k, 0]:.17g},"
                    f"{gmm.means[k, 1]:.17g},{c[0, 0]:.17g},{c[0, 1]:.17g},"
                    f"{c[1, 1]:.17g},{lab}\n")


def mixture_from_csv(path) -> GaussianMixture:
    rows = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=str)
    rows = np.atleast_2d(rows)
    w = rows[:, 0].astype(float)
    means = rows[:, 1:3].astype(float)
    covs = np.empty((len(w), 2, 2))
    covs[:, 0, 0] = rows[:, 3].astype(float)
    covs[:, 0, 1] = covs[:, 1, 0] = rows[:, 4].astype(float)
    covs[:, 1, 1] = rows[:, 5].astype(float)
    labels = None
    if rows.shape[1] > 6 and rows[0, 6] != "":
        labels = rows[:, 6].astype(int)
    return GaussianMixture(w, means, covs, labels)


def dataset_to_csv(ds: Dataset, path):
    with open(path, "w") as f:
        f.write("x,y,label\n")
        for i in range(len(ds.points)):
            lab = "" if ds.labels is None else str(int(ds.labels[i]))
            f.write(f"{ds.points[i, 0]:.17g},{ds.points[i, 1]:.17g},{lab}\n")


def dataset_from_csv(path) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Load (points, labels) back; the source mixture is not round-tripped."""
    rows = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1, dtype=str))
    pts = rows[:, :2].astype(float)
    labels = None
    if rows.shape[1] > 2 and rows[0, 2] != "":
        labels = rows[:, 2].astype(int)
    return pts, labels
