"""Deterministic DDIM sampling, DDIM inversion, and kernel-guided product
sampling (naive and stable variants) that draw y from the product of the
model density and a Gaussian kernel centered at an anchor point.

Chain convention: sampling walks the schedule grid from the highest index
(num_steps - 1, largest sigma) down to index 0 and then takes one final jump
to sigma = 0.  Chain position s = 0 is the first (noisiest) step; the kernel
term's active interval [k_lo, k_hi] is expressed in chain positions, so the
default (0.4 n, n - 1) applies the kernel during the final 60% of the chain.

All samplers are pure given (denoiser, config, seed) and report exact
score-model invocation counts.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .denoise import GuidanceConfig, guided_eps
from .schedule import NoiseSchedule, VARIANCE_EXPLODING, noise_at

__all__ = [
    "KernelGuide", "Trajectory", "IntegratorInstabilityError",
    "DivergedInversionError", "ddim_step", "ddim_final_step", "ddim_sample",
    "ddim_invert", "product_sample_naive", "product_sample_stable",
    "default_active_interval",
]


class IntegratorInstabilityError(RuntimeError):
    """Raised when the naive kernel-guided integrator produces non-finite states."""

    def __init__(self, step, anchor):
        self.step = step
        self.anchor = np.asarray(anchor)
        super().__init__(
            f"integrator instability at chain step {step}, "
            f"anchor ({self.anchor[0]:.6g}, {self.anchor[1]:.6g}); "
            "increase lambda or use the stable sampler")


class DivergedInversionError(RuntimeError):
    """Raised when DDIM inversion produces non-finite states."""


def default_active_interval(num_steps: int) -> tuple[int, int]:
    """Kernel term applied during the final 60% of the sampling chain."""
    return int(np.floor(0.4 * num_steps)), num_steps - 1


@dataclass(frozen=True)
class KernelGuide:
    """Anchor x, bandwidth lambda, and the chain interval where the kernel acts."""

    anchor: np.ndarray
    lam: float
    active_interval: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))

    def interval(self, num_steps: int) -> tuple[int, int]:
        if self.active_interval is None:
            return default_active_interval(num_steps)
        k_lo, k_hi = self.active_interval
        if not 0 <= k_lo <= k_hi < num_steps:
            raise ValueError("active_interval must satisfy 0 <= k_lo <= k_hi < num_steps")
        return k_lo, k_hi


@dataclass(frozen=True)
class Trajectory:
    """Latents along a chain: states[0] is the clean point, states[i] sits at
    grid index i - 1.  costs counts score-model invocations per point."""

    states: np.ndarray  # (num_steps + 1, ..., 2)
    costs: int

    def __post_init__(self):
        if self.costs < len(self.states) - 1:
            raise ValueError("costs must be at least num_steps")

    @property
    def num_steps(self) -> int:
        return len(self.states) - 1

    def at_index(self, grid_index: int) -> np.ndarray:
        """Latent at schedule grid index (states[grid_index + 1])."""
        return self.states[grid_index + 1]


def _rng_of(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def ddim_step(z, eps, schedule: NoiseSchedule, step: int):
    """One deterministic DDIM update from grid index `step` to `step - 1`."""
    if step < 1:
        raise ValueError("ddim_step requires step >= 1; use ddim_final_step for step 0")
    a1, s1 = noise_at(schedule, step)
    a0, s0 = noise_at(schedule, step - 1)
    if schedule.kind == VARIANCE_EXPLODING:
        return z + (s0 - s1) * eps
    return a0 * (z - s1 * eps) / a1 + s0 * eps


def ddim_final_step(z, eps, schedule: NoiseSchedule):
    """Jump from grid index 0 to sigma = 0 (the predicted clean point)."""
    a0, s0 = noise_at(schedule, 0)
    return (z - s0 * eps) / a0


def _draw_prior(rng, schedule: NoiseSchedule, shape) -> np.ndarray:
    z = rng.standard_normal(shape + (2,))
    if schedule.kind == VARIANCE_EXPLODING:
        z = z * schedule.sigma_max
    return z


def ddim_sample(denoiser, guidance: GuidanceConfig, schedule: NoiseSchedule,
                seed, cls: Optional[int] = None, n_samples: int = 1):
    """Run the full deterministic chain from a seeded Gaussian prior.

    Returns (samples (n_samples, 2), cost) where cost is the total number of
    score-model invocations (num_steps * evals_per_point per sample).
    """
    rng = _rng_of(seed)
    n = schedule.num_steps
    z = _draw_prior(rng, schedule, (n_samples,))
    for k in range(n - 1, -1, -1):
        eps = guided_eps(guidance, denoiser, schedule, k, z, cls)
        z = ddim_step(z, eps, schedule, k) if k > 0 else ddim_final_step(z, eps, schedule)
    return z, n * guidance.evals_per_point * n_samples


def ddim_invert(denoiser, guidance: GuidanceConfig, schedule: NoiseSchedule,
                x, cls: Optional[int] = None) -> Trajectory:
    """DDIM recurrence run in reverse, from clean x up to the noisiest grid index."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input point")
    n = schedule.num_steps
    states = np.empty((n + 1,) + x.shape)
    states[0] = x
    a0, s0 = noise_at(schedule, 0)
    z = a0 * x
    eps = guided_eps(guidance, denoiser, schedule, 0, z, cls)
    z = z + s0 * eps
    states[1] = z
    for k in range(n - 1):
        a1, s1 = noise_at(schedule, k)
        a2, s2 = noise_at(schedule, k + 1)
        eps = guided_eps(guidance, denoiser, schedule, k, z, cls)
        if schedule.kind == VARIANCE_EXPLODING:
            z = z + (s2 - s1) * eps
        else:
            z = a2 * (z - s1 * eps) / a1 + s2 * eps
        if not np.all(np.isfinite(z)):
            raise DivergedInversionError(f"inversion diverged at grid index {k + 1}")
        states[k + 2] = z
    return Trajectory(states=states, costs=n * guidance.evals_per_point)


def _kernel_eps(z, anchor, lam, alpha, sigma, kind):
    """Kernel score converted to eps units (the single conversion point).

    Score-space kernel term for K(v) = exp(-|v|^2 / lam^2), centered at the
    anchor: grad_z log K(x - z) = 2 (x - z) / lam^2; eps = -sigma * score.
    Under VP the kernel lives in data space, so z is rescaled by 1/alpha.
    """
    if kind == VARIANCE_EXPLODING:
        return -sigma * 2.0 * (anchor - z) / lam**2
    return -sigma * 2.0 * (anchor - z / alpha) / (alpha * lam**2)


def _regroup(z, guide: KernelGuide, n_samples: int, out_shape):
    """Undo the anchor repetition: flat (m, 2) -> (n_samples, *anchor_batch, 2)."""
    if guide.anchor.ndim > 1:
        z = z.reshape((-1, n_samples, 2)).swapaxes(0, 1)
    return z.reshape(out_shape)


def _broadcast_anchors(guide: KernelGuide, n_samples: int):
    anchor = guide.anchor
    if anchor.ndim == 1:
        batch = np.broadcast_to(anchor, (n_samples, 2)).copy()
        out_shape = (n_samples, 2)
    else:
        batch = np.repeat(anchor, n_samples, axis=0)
        out_shape = (n_samples,) + anchor.shape
    return batch, out_shape


def product_sample_naive(denoiser, guidance: GuidanceConfig,
                         schedule: NoiseSchedule, guide: KernelGuide, seed,
                         cls: Optional[int] = None, n_samples: int = 1):
    """Sample the kernel-anchored product density by adding the kernel score
    directly to the guided noise prediction at every active step.

    Raises IntegratorInstabilityError when the kernel term blows the chain up
    (small lambda with a far anchor), which is the failure mode the stable
    variant exists to avoid.  Returns (samples, total_cost).
    """
    rng = _rng_of(seed)
    n = schedule.num_steps
    k_lo, k_hi = guide.interval(n)
    anchors, out_shape = _broadcast_anchors(guide, n_samples)
    m = len(anchors)
    z = _draw_prior(rng, schedule, (m,))
    for pos, k in enumerate(range(n - 1, -1, -1)):
        a, s = noise_at(schedule, k)
        eps = guided_eps(guidance, denoiser, schedule, k, z, cls)
        if k_lo <= pos <= k_hi:
            eps = eps + _kernel_eps(z, anchors, guide.lam, a, s, schedule.kind)
        z = ddim_step(z, eps, schedule, k) if k > 0 else ddim_final_step(z, eps, schedule)
        # catch the blow-up before |z|^2 overflows inside the denoiser
        bad_rows = ~np.isfinite(z).all(axis=-1) | (np.abs(z).max(axis=-1) > 1e150)
        if np.any(bad_rows):
            raise IntegratorInstabilityError(pos, anchors[np.argmax(bad_rows)])
    return _regroup(z, guide, n_samples, out_shape), n * guidance.evals_per_point * m


def product_sample_stable(denoiser, guidance: GuidanceConfig,
                          schedule: NoiseSchedule, guide: KernelGuide, seed,
                          cls: Optional[int] = None, n_samples: int = 1,
                          use_inversion_anchor: bool = True):
    """Stable product sampler: per step take the plain guided DDIM update,
    then contract toward the per-step anchor by exp(-(sig_k^2 - sig_{k-1}^2)/lam^2),
    the exact integral of the kernel score over the step.  Never produces
    non-finite states for finite inputs.

    Anchors default to the DDIM-inversion trajectory of the guide anchor
    (noise-scaled anchors); set use_inversion_anchor=False to contract toward
    the raw anchor at every step (ablation).  Returns (samples, total_cost);
    the cost includes the shared inversion chain when used.
    """
    rng = _rng_of(seed)
    n = schedule.num_steps
    k_lo, k_hi = guide.interval(n)
    anchors, out_shape = _broadcast_anchors(guide, n_samples)
    m = len(anchors)
    inv_cost = 0
    if use_inversion_anchor:
        traj = ddim_invert(denoiser, guidance, schedule, anchors, cls)
        inv_cost = traj.costs * m
        anchor_at = lambda k: traj.states[k + 1]
    else:
        anchor_at = lambda k: anchors
    sig2 = np.concatenate([[0.0], (schedule.sigma / schedule.alpha) ** 2])
    z = _draw_prior(rng, schedule, (m,))
    for pos, k in enumerate(range(n - 1, -1, -1)):
        eps = guided_eps(guidance, denoiser, schedule, k, z, cls)
        z = ddim_step(z, eps, schedule, k) if k > 0 else ddim_final_step(z, eps, schedule)
        if k_lo <= pos <= k_hi:
            # contraction over [sigma_{k-1}, sigma_k] in noise-to-signal units
            f = np.exp(-(sig2[k + 1] - sig2[k]) / guide.lam**2)
            a = anchor_at(k - 1)
            z = a + (z - a) * f
    return _regroup(z, guide, n_samples, out_shape), n * guidance.evals_per_point * m + inv_cost
