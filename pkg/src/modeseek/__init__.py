"""Diffusion mode seeking on analytic 2D toy densities.

Library layout:

* :mod:`modeseek.schedule` -- diffusion time grids and noise levels
* :mod:`modeseek.mixtures` -- toy Gaussian-mixture densities and datasets
* :mod:`modeseek.denoise` -- ideal / learned denoisers and guidance
* :mod:`modeseek.sampling` -- DDIM, inversion, kernel-guided product sampling
* :mod:`modeseek.distill` -- SDS / SDI / mean-shift gradient estimators + loop
* :mod:`modeseek.analysis` -- metrics, estimator efficiency, loss landscapes
* :mod:`modeseek.cli` -- experiment runner
"""

from .schedule import (NoiseSchedule, make_schedule, noise_at,
                       VARIANCE_EXPLODING, VARIANCE_PRESERVING)
from .mixtures import (GaussianMixture, Dataset, build_fractal, build_spiral,
                       build_pinwheel, sample, density, log_density, score,
                       smoothed, conditional, product_mixture)
from .denoise import (IdealDenoiser, MixtureDenoiser, LearnedDenoiser, GuidanceConfig,
                      CountingDenoiser, ideal_denoise, eps_from_denoised,
                      denoised_from_eps, mean_shift_iterate, guided_eps,
                      make_autoguidance_reference, load_weights, save_weights,
                      mlp_forward)
from .sampling import (KernelGuide, Trajectory, IntegratorInstabilityError,
                       DivergedInversionError, ddim_step, ddim_sample,
                       ddim_invert, product_sample_naive,
                       product_sample_stable, default_active_interval)
from .distill import (GradientEstimate, DistillState, BandwidthSchedule,
                      OptConfig, sds_gradient, sdi_gradient, msd_gradient,
                      msd_exact_gradient, adam_step, anneal, distill_run)
from .analysis import (LandscapeGrid, MetricsReport, nll, mmd,
                       precision_recall, efficiency, landscape,
                       find_local_maxima, mixture_modes)

__version__ = "0.1.0"
