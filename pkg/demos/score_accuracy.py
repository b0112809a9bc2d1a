#!/usr/bin/env python3
"""Posterior score estimation accuracy on a conjugate Gaussian problem.

With a N(0,1) prior and a unit linear observation, the smoothed posterior
at every diffusion time is Gaussian with known mean and variance, so the
Monte-Carlo score estimate (inner Langevin chains on the tethered target,
tail-averaged into a denoiser) can be graded pointwise. Prints estimated
vs exact scores on an x grid at a few times.
"""

import numpy as np

from pdps.models import (IsotropicGaussianMixture, LinearGaussianLikelihood,
                         ProblemSpec)
from pdps.oracle import exact_posterior, exact_score, exact_timet_posterior
from pdps.rgo import RgoConfig, estimate_posterior_score
from pdps.schedule import OUSchedule

TIMES = (0.1, 0.2, 0.4)
GRID = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)


def main():
    prior = IsotropicGaussianMixture([1.0], [0.0], [1.0])
    likelihood = LinearGaussianLikelihood(np.array([[1.0]]), np.array([0.0]), 1.0)
    problem = ProblemSpec(prior=prior, likelihood=likelihood)
    posterior = exact_posterior(prior, likelihood)

    schedule = OUSchedule()
    config = RgoConfig(n_in=2000, m_chains=100)
    rng = np.random.default_rng(7)

    for t in TIMES:
        mixture_t = exact_timet_posterior(posterior, schedule, t)
        print(f"t = {t}")
        print(f"  {'x':>6} {'exact':>10} {'estimate':>10} {'abs err':>9}")
        errs, mags = [], []
        for point in GRID:
            x = np.array([point])
            est = float(estimate_posterior_score(problem, schedule, t, x,
                                                 config, rng=rng)[0])
            exact = float(exact_score(mixture_t, x)[0])
            errs.append(abs(est - exact))
            mags.append(abs(exact))
            print(f"  {point:6.1f} {exact:10.5f} {est:10.5f} "
                  f"{abs(est - exact):9.5f}")
        agg = np.mean(errs) / np.mean(mags)
        print(f"  aggregate relative error = {agg:.4f}\n")


if __name__ == "__main__":
    main()
