"""Posterior-sampling toolkit: early-stopped reverse diffusion with
Monte-Carlo posterior score estimation.

Modules
-------
schedule   OU noise schedule, duality-window thresholds.
models     Problem definition: mixture priors, likelihoods, model constants.
oracle     Analytic Gaussian-mixture posteriors, exact samplers, baselines,
           Wasserstein metrics.
rgo        Restricted Gaussian oracle: inner Langevin chains, denoiser and
           posterior-score estimators.
warmstart  Langevin warm start of the terminal distribution.
reverse    Early-stopped reverse diffusion sampler and the accuracy advisor.
cli        Command-line interface over YAML run configs.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
