"""Sample-quality metrics, Monte Carlo estimator efficiency, and
loss-landscape reconstruction from sampled gradient fields.

The landscape potential is the least-squares integral of the sampled field:
phi minimizing sum |grad phi - field|^2 on a regular grid (a discrete Poisson
problem with Neumann boundaries), anchored so min(phi) = 0.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import lsmr
from scipy.spatial import cKDTree

from .mixtures import GaussianMixture, log_density, score, smoothed

__all__ = [
    "LandscapeGrid", "MetricsReport", "nll", "mmd", "precision_recall",
    "efficiency", "landscape", "find_local_maxima", "mixture_modes",
]

EFFICIENCY_LOG10_CAP = 20.0


@dataclass(frozen=True)
class MetricsReport:
    nll: float
    mmd: float
    precision: float
    recall: float
    efficiency_log10: float = float("nan")

    def __post_init__(self):
        if self.mmd < 0 or not (0 <= self.precision <= 1) or not (0 <= self.recall <= 1):
            raise ValueError("metric out of range")


def nll(points, gmm: GaussianMixture, cls: Optional[int] = None) -> float:
    """Mean negative log ground-truth density of a point set."""
    pts = np.asarray(points, dtype=float)
    return float(-np.mean(log_density(gmm, pts, cls)))


def _median_pairwise(x: np.ndarray, y: np.ndarray, cap: int = 2000) -> float:
    z = np.concatenate([x, y])
    if len(z) > cap:
        z = z[np.linspace(0, len(z) - 1, cap).astype(int)]
    d2 = _pairwise_sq(z, z)
    d = np.sqrt(d2[np.triu_indices(len(z), k=1)])
    med = float(np.median(d))
    return med if med > 0 else 1.0


def _pairwise_sq(a, b):
    """|a_i - b_j|^2 via the dot-product expansion (avoids a 3D broadcast)."""
    d2 = (np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :]
          - 2.0 * (a @ b.T))
    return np.maximum(d2, 0.0)


def _mean_kernel(x, y, h, chunk=1000):
    """Mean of exp(-|xi - yj|^2 / (2 h^2)) over all pairs, chunked."""
    total = 0.0
    for i in range(0, len(x), chunk):
        d2 = _pairwise_sq(x[i:i + chunk], y)
        total += np.exp(-d2 / (2 * h * h)).sum()
    return total / (len(x) * len(y))


def mmd(x_set, y_set, bandwidth: Optional[float] = None) -> float:
    """Biased V-statistic MMD^2 with a Gaussian kernel.

    Bandwidth defaults to the median pairwise distance of the pooled sets.
    """
    x = np.asarray(x_set, dtype=float)
    y = np.asarray(y_set, dtype=float)
    h = bandwidth if bandwidth is not None else _median_pairwise(x, y)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    val = _mean_kernel(x, x, h) + _mean_kernel(y, y, h) - 2 * _mean_kernel(x, y, h)
    return float(max(val, 0.0))


def precision_recall(generated, reference, k: int = 5) -> tuple[float, float]:
    """k-NN manifold precision and recall.

    Precision: fraction of generated points lying within the reference
    manifold (distance to some reference point below that point's k-th
    nearest-neighbor radius).  Recall: fraction of reference points whose
    k-NN ball contains at least one generated point.
    """
    gen = np.asarray(generated, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if k < 1 or k >= len(ref):
        raise ValueError("need 1 <= k < len(reference)")
    tree = cKDTree(ref)
    # k+1 because the nearest neighbor of a reference point is itself
    radii = tree.query(ref, k=k + 1)[0][:, -1]
    gen_tree = cKDTree(gen)
    precision_hits = 0
    covered = np.zeros(len(ref), dtype=bool)
    for j, r in enumerate(radii):
        idx = gen_tree.query_ball_point(ref[j], r)
        if idx:
            covered[j] = True
    # precision: nearest reference neighbors, checked against their radii
    chunk = 1024
    for i in range(0, len(gen), chunk):
        d2 = _pairwise_sq(gen[i:i + chunk], ref)
        precision_hits += int(np.any(np.sqrt(d2) <= radii[None, :], axis=1).sum())
    return precision_hits / len(gen), float(covered.mean())


def efficiency(estimator: Callable, probes,
               reference_grad: Callable[[np.ndarray], np.ndarray],
               trials: int, seed: int = 0) -> float:
    """log10 Monte Carlo estimator efficiency |g|^2 / (MSE * cost).

    For each probe x, `trials` independent estimates are drawn; MSE is the
    mean squared error against the reference gradient g(x) and cost is the
    per-estimate score-model invocation count, so the score measures accuracy
    per model invocation.  A zero-variance estimator that hits the reference
    exactly has MSE = 0; per-probe efficiencies are therefore capped at
    10^+-20 before probe-averaging and the final log10.
    """
    if trials < 30:
        raise ValueError("trials must be >= 30")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    effs = []
    for p, x in enumerate(probes):
        g_ref = np.asarray(reference_grad(x), dtype=float)
        grads = np.empty((trials, 2))
        cost = 0
        for i in range(trials):
            est = estimator(x, int(np.random.default_rng(
                np.random.SeedSequence((seed, p, i))).integers(2**62)))
            grads[i] = est.grad
            cost += est.cost
        cost_per = cost / trials
        mse = float(np.mean(np.sum((grads - g_ref) ** 2, axis=1)))
        eff = float(g_ref @ g_ref) / (max(mse, 1e-300) * cost_per)
        effs.append(float(np.clip(eff, 10.0 ** (-EFFICIENCY_LOG10_CAP),
                                  10.0 ** EFFICIENCY_LOG10_CAP)))
    out = np.log10(np.mean(effs))
    return float(np.clip(out, -EFFICIENCY_LOG10_CAP, EFFICIENCY_LOG10_CAP))


def mixture_modes(gmm: GaussianMixture, lam: Optional[float] = None,
                  starts=None, max_iters: int = 5000, tol: float = 1e-12,
                  merge_radius: float = 1e-3) -> np.ndarray:
    """Local maxima of a (kernel-smoothed) mixture density.

    Runs the fixed-point ascent x <- x + h * grad log p(x) from every start
    (component means by default) and merges converged points closer than
    merge_radius.  Returns (m, 2) modes sorted by descending density.
    """
    g = gmm if lam is None else smoothed(gmm, lam)
    x = np.array(gmm.means if starts is None else starts, dtype=float)
    h = min(np.min(np.linalg.eigvalsh(g.covariances)), 1.0)
    for _ in range(max_iters):
        nxt = x + h * score(g, x)
        if np.max(np.abs(nxt - x)) < tol:
            x = nxt
            break
        x = nxt
    dens = log_density(g, x)
    order = np.argsort(-dens)
    modes = []
    for i in order:
        if not any(np.linalg.norm(x[i] - m) < merge_radius for m in modes):
            modes.append(x[i])
    return np.array(modes)


# ---------------------------------------------------------------------------
# landscape reconstruction


@dataclass(frozen=True)
class LandscapeGrid:
    """A regular grid of averaged gradient samples and the scalar potential
    integrated from them (anchored to min = 0)."""

    extent: tuple[float, float, float, float]  # (x_lo, x_hi, y_lo, y_hi)
    resolution: tuple[int, int]                # (ny, nx)
    grad_field: np.ndarray                     # (ny, nx, 2)
    potential: np.ndarray                      # (ny, nx)
    residual: float

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x_lo, x_hi, y_lo, y_hi = self.extent
        ny, nx = self.resolution
        xs = x_lo + (np.arange(nx) + 0.5) * (x_hi - x_lo) / nx
        ys = y_lo + (np.arange(ny) + 0.5) * (y_hi - y_lo) / ny
        return xs, ys

    def cell_size(self) -> tuple[float, float]:
        x_lo, x_hi, y_lo, y_hi = self.extent
        ny, nx = self.resolution
        return (x_hi - x_lo) / nx, (y_hi - y_lo) / ny


def _gradient_operator(ny, nx, hx, hy):
    """Sparse forward-difference operator on edge midpoints, plus the
    averaging matrices mapping cell-centered field samples to those edges."""
    n = ny * nx

    def cid(i, j):
        return i * nx + j

    rows, cols, vals = [], [], []
    avg_r, avg_c, avg_v = [], [], []
    r = 0
    for i in range(ny):
        for j in range(nx - 1):
            rows += [r, r]
            cols += [cid(i, j + 1), cid(i, j)]
            vals += [1.0 / hx, -1.0 / hx]
            avg_r += [r, r]
            avg_c += [cid(i, j), cid(i, j + 1)]
            avg_v += [0.5, 0.5]
            r += 1
    n_x_edges = r
    for i in range(ny - 1):
        for j in range(nx):
            rows += [r, r]
            cols += [cid(i + 1, j), cid(i, j)]
            vals += [1.0 / hy, -1.0 / hy]
            avg_r += [r, r]
            avg_c += [cid(i, j), cid(i + 1, j)]
            avg_v += [0.5, 0.5]
            r += 1
    D = sparse.csr_matrix((vals, (rows, cols)), shape=(r, n))
    A = sparse.csr_matrix((avg_v, (avg_r, avg_c)), shape=(r, n))
    return D, A, n_x_edges


def integrate_field(field: np.ndarray, extent, tol: float = 1e-12):
    """Least-squares potential of a cell-centered 2D vector field.

    Returns (potential (ny, nx) anchored to min = 0, rms residual of the
    edge-difference equations).
    """
    field = np.asarray(field, dtype=float)
    ny, nx = field.shape[:2]
    x_lo, x_hi, y_lo, y_hi = extent
    hx = (x_hi - x_lo) / nx
    hy = (y_hi - y_lo) / ny
    D, A, n_x_edges = _gradient_operator(ny, nx, hx, hy)
    gx = field[..., 0].ravel()
    gy = field[..., 1].ravel()
    rhs = np.concatenate([(A[:n_x_edges] @ gx), (A[n_x_edges:] @ gy)])
    sol = lsmr(D, rhs, atol=tol, btol=tol, maxiter=20000)[0]
    resid = D @ sol - rhs
    rms = float(np.sqrt(np.mean(resid**2)))
    phi = sol.reshape(ny, nx)
    return phi - phi.min(), rms


def landscape(field_fn: Callable, extent=(-1.5, 1.5, -1.5, 1.5),
              resolution=(64, 64), n_mc_per_cell: int = 1,
              seed: int = 0) -> LandscapeGrid:
    """Average `n_mc_per_cell` field samples per grid cell and integrate them.

    field_fn(points (M, 2), seed) must return an (M, 2) array of gradient
    samples (the direction the optimizer ascends).
    """
    ny, nx = resolution
    x_lo, x_hi, y_lo, y_hi = extent
    xs = x_lo + (np.arange(nx) + 0.5) * (x_hi - x_lo) / nx
    ys = y_lo + (np.arange(ny) + 0.5) * (y_hi - y_lo) / ny
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    acc = np.zeros((len(pts), 2))
    for rep in range(n_mc_per_cell):
        acc += np.asarray(field_fn(pts, int(np.random.default_rng(
            np.random.SeedSequence((seed, rep))).integers(2**62))))
    field = (acc / n_mc_per_cell).reshape(ny, nx, 2)
    phi, rms = integrate_field(field, extent)
    return LandscapeGrid(extent=tuple(extent), resolution=(ny, nx),
                         grad_field=field, potential=phi, residual=rms)


def find_local_maxima(grid: LandscapeGrid, min_separation: float = 0.0) -> np.ndarray:
    """Interior 8-neighborhood local maxima of the potential, with
    non-maximum suppression at min_separation.  Returns (m, 2) points."""
    phi = grid.potential
    ny, nx = phi.shape
    c = phi[1:-1, 1:-1]
    mask = np.ones_like(c, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            mask &= c > phi[1 + di:ny - 1 + di, 1 + dj:nx - 1 + dj]
    ii, jj = np.nonzero(mask)
    if len(ii) == 0:
        return np.empty((0, 2))
    xs, ys = grid.cell_centers()
    cand = np.stack([xs[jj + 1], ys[ii + 1]], axis=1)
    vals = c[ii, jj]
    order = np.argsort(-vals)
    keep = []
    for idx in order:
        p = cand[idx]
        if all(np.linalg.norm(p - cand[j]) >= min_separation for j in keep):
            keep.append(idx)
    return cand[keep]
