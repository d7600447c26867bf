"""Gradient estimators (SDS, SDI, MSD), an Adam optimizer, bandwidth
annealing, and the full per-point distillation loop.

The toy generator is the identity map, so the optimized parameter is the 2D
point itself.  All estimators work on batched points x of shape (B, 2) and
report the exact number of score-model invocations they spent.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .denoise import GuidanceConfig, guided_eps, eps_from_denoised
from .sampling import (KernelGuide, ddim_invert, product_sample_naive,
                       product_sample_stable)
from .schedule import NoiseSchedule

__all__ = [
    "GradientEstimate", "DistillState", "BandwidthSchedule", "OptConfig",
    "DistillResult", "sds_gradient", "sdi_gradient", "msd_gradient",
    "msd_exact_gradient", "adam_step", "anneal", "distill_run",
]


@dataclass(frozen=True)
class GradientEstimate:
    """A gradient estimate plus its price in score-model invocations."""

    grad: np.ndarray
    cost: int
    mc_samples: int

    def __post_init__(self):
        if self.cost < 1:
            raise ValueError("cost must be >= 1")
        if not np.all(np.isfinite(self.grad)):
            raise ValueError("non-finite gradient")


@dataclass(frozen=True)
class DistillState:
    """Optimizer state for a batch of identity-generator parameters."""

    theta: np.ndarray
    step: int = 0
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None
    lam: float = 0.316
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.adam_m is None:
            object.__setattr__(self, "adam_m", np.zeros_like(self.theta))
        if self.adam_v is None:
            object.__setattr__(self, "adam_v", np.zeros_like(self.theta))


@dataclass(frozen=True)
class BandwidthSchedule:
    """Linear bandwidth decay from lambda0 to lambda_min over total_steps."""

    lambda0: float = 0.316
    lambda_min: float = 0.01
    total_steps: int = 150
    mode: str = "linear"

    def __post_init__(self):
        if not 0 < self.lambda_min < self.lambda0:
            raise ValueError("need 0 < lambda_min < lambda0")
        if self.mode not in ("linear", "none"):
            raise ValueError("mode must be 'linear' or 'none'")


def anneal(schedule: BandwidthSchedule, k: int) -> tuple[float, bool]:
    """Bandwidth at iteration k and whether the run should terminate.

    Linear interpolation reaches lambda_min exactly at k = total_steps, which
    counts as crossing the threshold.
    """
    if schedule.mode == "none":
        return schedule.lambda0, False
    frac = k / schedule.total_steps
    # convex combination is exact at both endpoints
    raw = schedule.lambda0 * (1.0 - frac) + schedule.lambda_min * frac
    terminated = raw <= schedule.lambda_min
    return max(raw, schedule.lambda_min), terminated


# ---------------------------------------------------------------------------
# gradient estimators


def sds_gradient(denoiser, guidance: GuidanceConfig, schedule: NoiseSchedule,
                 x, n_mc: int, seed, cls: Optional[int] = None) -> GradientEstimate:
    """Score-distillation gradient: average over draws of (t, noise) of
    w(t) * (eps_hat(alpha_t x + sigma_t xi) - xi), with w(t) = alpha(t)."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    acc = np.zeros_like(x)
    for _ in range(n_mc):
        t = rng.integers(0, schedule.num_steps, size=batch)
        a = schedule.alpha[t]
        s = schedule.sigma[t]
        xi = rng.standard_normal(x.shape)
        z = a[..., None] * x + s[..., None] * xi
        eps = guided_eps(guidance, denoiser, schedule, 0, z, cls, sigma=s, alpha=a)
        acc += a[..., None] * (eps - xi)
    grad = acc / n_mc
    cost = n_mc * guidance.evals_per_point * int(np.prod(batch) or 1)
    return GradientEstimate(grad=grad, cost=cost, mc_samples=n_mc)


def sdi_gradient(denoiser, guidance: GuidanceConfig, schedule: NoiseSchedule,
                 x, n_mc: int, seed, cls: Optional[int] = None) -> GradientEstimate:
    """SDS with the fresh noise replaced by the noise implied by the DDIM
    inversion trajectory of x at the drawn time."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    npts = int(np.prod(batch) or 1)
    traj = ddim_invert(denoiser, guidance, schedule, x, cls)
    acc = np.zeros_like(x)
    for _ in range(n_mc):
        t = rng.integers(0, schedule.num_steps, size=batch)
        a = schedule.alpha[t]
        s = schedule.sigma[t]
        # latent and implied noise read off the inversion trajectory
        idx = (t + 1,) + tuple(np.indices(batch)) if batch else (t + 1,)
        z = traj.states[idx]
        eps_star = (z - a[..., None] * x) / s[..., None]
        eps = guided_eps(guidance, denoiser, schedule, 0, z, cls, sigma=s, alpha=a)
        acc += a[..., None] * (eps - eps_star)
    grad = acc / n_mc
    cost = traj.costs * npts + n_mc * guidance.evals_per_point * npts
    return GradientEstimate(grad=grad, cost=cost, mc_samples=n_mc)


def msd_gradient(denoiser, guidance: GuidanceConfig, schedule: NoiseSchedule,
                 guide: KernelGuide, n_mc: int, seed,
                 cls: Optional[int] = None, stable: bool = False,
                 inversion_anchor: bool = True) -> GradientEstimate:
    """Mean-shift gradient: mean of product-density samples minus the anchor."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if stable:
        y, cost = product_sample_stable(denoiser, guidance, schedule, guide,
                                        seed, cls, n_samples=n_mc,
                                        use_inversion_anchor=inversion_anchor)
    else:
        y, cost = product_sample_naive(denoiser, guidance, schedule, guide,
                                       seed, cls, n_samples=n_mc)
    grad = y.mean(axis=0) - guide.anchor
    return GradientEstimate(grad=grad, cost=cost, mc_samples=n_mc)


def msd_exact_gradient(denoiser, x, lam: float,
                       cls: Optional[int] = None) -> GradientEstimate:
    """Zero-variance mean-shift gradient via the closed-form product mean.

    For denoisers with exact posterior means the expectation of the
    product-density sample is one denoiser evaluation at sigma = lam/sqrt(2),
    so the estimate costs a single score-model invocation per point.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    x = np.asarray(x, dtype=float)
    y = denoiser.denoise(x, lam / np.sqrt(2.0), cls)
    npts = int(np.prod(x.shape[:-1]) or 1)
    return GradientEstimate(grad=y - x, cost=npts, mc_samples=1)


# ---------------------------------------------------------------------------
# optimizer and loop


def adam_step(state: DistillState, grad, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps_hat: float = 1e-8) -> DistillState:
    """Standard bias-corrected Adam descent step on theta."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    t = state.step + 1
    m = beta1 * state.adam_m + (1 - beta1) * grad
    v = beta2 * state.adam_v + (1 - beta2) * grad**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    theta = state.theta - lr * m_hat / (np.sqrt(v_hat) + eps_hat)
    return replace(state, theta=theta, step=t, adam_m=m, adam_v=v)


@dataclass(frozen=True)
class OptConfig:
    """Distillation loop parameters (paper-stated defaults where known)."""

    steps: int = 150
    lr: float = 0.08
    beta1: float = 0.9
    beta2: float = 0.999
    n_mc: int = 1
    bandwidth: BandwidthSchedule = field(default_factory=BandwidthSchedule)
    stable: bool = False
    inversion_anchor: bool = True
    active_interval: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class DistillResult:
    theta: np.ndarray           # final (B, 2)
    trace_theta: np.ndarray     # (iters, B, 2), positions before each update
    trace_grad_norm: np.ndarray  # (iters, B)
    trace_lambda: np.ndarray    # (iters,)
    trace_cost: np.ndarray      # (iters,), cumulative score-model invocations
    iterations: int


METHODS = ("sds", "sdi", "msd")


def distill_run(method: str, denoiser, guidance: GuidanceConfig,
                schedule: NoiseSchedule, init_points, opt: OptConfig,
                seed: int, cls: Optional[int] = None) -> DistillResult:
    """Run the chosen estimator + Adam for every init point.

    MSD terminates as soon as the bandwidth anneal crosses lambda_min; SDS
    and SDI always run the full budget.  Per-iteration randomness is drawn
    from a stream keyed on (seed, iteration), so a rerun with the same batch
    is bitwise reproducible.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    init = np.asarray(init_points, dtype=float)
    if init.ndim != 2 or init.shape[1] != 2 or len(init) == 0:
        raise ValueError("init_points must be a nonempty (B, 2) array")
    state = DistillState(theta=init.copy(), rng_seed=seed)
    thetas, gnorms, lams, costs = [], [], [], []
    total_cost = 0
    for k in range(opt.steps):
        lam, terminated = anneal(opt.bandwidth, k)
        if method == "msd" and terminated:
            break
        rng = np.random.default_rng(np.random.SeedSequence((seed, k)))
        if method == "sds":
            est = sds_gradient(denoiser, guidance, schedule, state.theta,
                               opt.n_mc, rng, cls)
            grad = est.grad
        elif method == "sdi":
            est = sdi_gradient(denoiser, guidance, schedule, state.theta,
                               opt.n_mc, rng, cls)
            grad = est.grad
        else:
            guide = KernelGuide(anchor=state.theta, lam=lam,
                                active_interval=opt.active_interval)
            est = msd_gradient(denoiser, guidance, schedule, guide,
                               opt.n_mc, rng, cls, stable=opt.stable,
                               inversion_anchor=opt.inversion_anchor)
            grad = -est.grad  # ascend the mean-shift vector
        total_cost += est.cost
        thetas.append(state.theta.copy())
        gnorms.append(np.linalg.norm(est.grad, axis=-1))
        lams.append(lam)
        costs.append(total_cost)
        state = adam_step(state, grad, opt.lr, opt.beta1, opt.beta2)
    return DistillResult(theta=state.theta,
                         trace_theta=np.array(thetas),
                         trace_grad_norm=np.array(gnorms),
                         trace_lambda=np.array(lams),
                         trace_cost=np.array(costs),
                         iterations=state.step)
