"""Diffusion time discretization and the scaling/noise functions.

A schedule stores a strictly increasing time grid t in (0, 1] together with
the per-time scaling alpha(t) and noise level sigma(t).  Two conventions are
supported:

* ``variance_exploding`` (VE): alpha = 1, sigma geometrically spaced.
* ``variance_preserving`` (VP): sigma follows a sine ramp, alpha = sqrt(1 - sigma^2),
  so alpha^2 + sigma^2 = 1 at every grid point.
"""

from dataclasses import dataclass

import numpy as np

VARIANCE_PRESERVING = "variance_preserving"
VARIANCE_EXPLODING = "variance_exploding"

_KINDS = (VARIANCE_PRESERVING, VARIANCE_EXPLODING)


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable discretized noise schedule."""

    kind: str
    t_grid: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        t, a, s = self.t_grid, self.alpha, self.sigma
        if len(t) < 2 or len(a) != len(t) or len(s) != len(t):
            raise ValueError("schedule arrays must share a length >= 2")
        if not (np.all(np.diff(t) > 0) and t[0] > 0 and t[-1] <= 1):
            raise ValueError("t_grid must be strictly increasing within (0, 1]")
        if not np.all(np.diff(s) > 0):
            raise ValueError("sigma must be strictly increasing in t")
        if self.kind == VARIANCE_PRESERVING:
            if not np.all(np.diff(a) < 0):
                raise ValueError("alpha must be strictly decreasing in t (VP)")
            if np.max(np.abs(a**2 + s**2 - 1.0)) > 1e-12:
                raise ValueError("VP identity alpha^2 + sigma^2 = 1 violated")
        else:
            if not np.all(a == 1.0):
                raise ValueError("VE requires alpha = 1 everywhere")
        self.t_grid.setflags(write=False)
        self.alpha.setflags(write=False)
        self.sigma.setflags(write=False)

    @property
    def num_steps(self) -> int:
        return len(self.t_grid)

    @property
    def sigma_max(self) -> float:
        return float(self.sigma[-1])

    def sigma_tilde(self, index):
        """Noise-to-signal level sigma/alpha at a grid index (VE-equivalent sigma)."""
        return float(self.sigma[index] / self.alpha[index])


def make_schedule(kind: str, num_steps: int = 32,
                  sigma_min: float = 0.002, sigma_max: float = 2.0) -> NoiseSchedule:
    """Build a schedule of `num_steps` discrete times.

    VE: sigma geometrically spaced from sigma_min to sigma_max, alpha = 1.
    VP: sigma(t) = sigma_max * sin(pi t / 2) on a linear t ramp chosen so the
    first grid point has sigma = sigma_min; requires sigma_max <= 1.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if num_steps < 2:
        raise ValueError("num_steps must be >= 2")
    if not (0 < sigma_min < sigma_max):
        raise ValueError("need 0 < sigma_min < sigma_max")

    if kind == VARIANCE_EXPLODING:
        t_grid = np.linspace(1.0 / num_steps, 1.0, num_steps)
        sigma = np.geomspace(sigma_min, sigma_max, num_steps)
        alpha = np.ones(num_steps)
    else:
        if sigma_max > 1.0:
            raise ValueError("variance_preserving requires sigma_max <= 1")
        t_lo = (2.0 / np.pi) * np.arcsin(sigma_min / sigma_max)
        t_grid = np.linspace(t_lo, 1.0, num_steps)
        sigma = sigma_max * np.sin(np.pi * t_grid / 2.0)
        alpha = np.sqrt(1.0 - sigma**2)
    return NoiseSchedule(kind=kind, t_grid=t_grid, alpha=alpha, sigma=sigma)


def noise_at(schedule: NoiseSchedule, index: int) -> tuple[float, float]:
    """Return the stored (alpha, sigma) pair at a grid index."""
    n = schedule.num_steps
    if not 0 <= index < n:
        raise IndexError(f"step index {index} out of range [0, {n})")
    return float(schedule.alpha[index]), float(schedule.sigma[index])
