"""Inner Langevin machinery: Monte-Carlo posterior score estimation.

At an evaluation point (t, x) the conditional law of the clean signal given
the time-t state x and the observation has log density

    log pi_0(x0) - l_y(x0) - |x - mu_t x0|^2 / (2 sigma_t^2)

up to a constant. Short Euler-Maruyama chains with an SNR-adaptive step
target it (the restricted Gaussian oracle of proximal samplers); the mean of
the pooled post-burn-in particles estimates the conditional mean
E[X0 | Xt = x, y], which converts to the posterior score via

    score(t, x) = -x / sigma_t^2 + (mu_t / sigma_t^2) * E[X0 | Xt = x, y].

The private helpers evolve (B, M, d) chain blocks, B independent
trajectories of M chains each, and are reused by the outer sampling loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RgoConfig",
    "ParticleBatch",
    "DivergenceError",
    "rgo_drift",
    "rgo_step_size",
    "rgo_sample",
    "estimate_denoiser",
    "estimate_posterior_score",
]

# Step cap keeps the Euler chain stable when the drift norm is tiny near a
# mode: with step dt against curvature lam the stationary variance inflates
# by 2 / (2 - lam*dt), so 0.02 keeps the inflation near 2% for lam ~ 2.
DEFAULT_STEP_CLAMP = (1e-10, 0.02)
_NORM_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """A chain or trajectory reached a non-finite state."""


@dataclass(frozen=True)
class RgoConfig:
    """Inner-loop parameters.

    n_in inner steps of m_chains parallel chains; the first
    burn_in_fraction of each chain is discarded and the remaining states
    pooled. snr_in sets the adaptive step through rgo_step_size; step_clamp
    bounds it.
    """

    n_in: int
    snr_in: float = 0.075
    m_chains: int = 20
    burn_in_fraction: float = 0.5
    step_clamp: tuple = DEFAULT_STEP_CLAMP

    def __post_init__(self):
        if self.n_in < 0:
            raise ValueError("n_in must be nonnegative")
        if not self.snr_in > 0:
            raise ValueError("snr_in must be positive")
        if self.m_chains < 1:
            raise ValueError("m_chains must be >= 1")
        if not 0.0 < self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must be in (0, 1)")
        lo, hi = self.step_clamp
        if not (0.0 < lo <= hi):
            raise ValueError("step_clamp must satisfy 0 < min <= max")
        if self.n_in >= 1 and self._pool_floor < 1:
            raise ValueError("effective particle count must be >= 1")

    @property
    def _pool_floor(self):
        return math.floor(self.burn_in_fraction * self.m_chains * self.n_in)

    @property
    def tail_steps(self):
        """Post-burn-in states kept per chain: the last ceil((1-rho) n_in)."""
        if self.n_in == 0:
            return 0
        return max(1, math.ceil((1.0 - self.burn_in_fraction) * self.n_in))


@dataclass(frozen=True)
class ParticleBatch:
    """Pooled post-burn-in particles from one (t, x) evaluation.

    particles has shape (m, d), pooled step-major so the final m_chains rows
    are the final chain states (used for chain reuse). source records the
    (t, x, y) evaluation point.
    """

    particles: np.ndarray
    source: tuple = (None, None, None)

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim != 2:
            raise ValueError("particles must be an (m, d) array")
        if not np.all(np.isfinite(p)):
            raise ValueError("particles must be finite")
        object.__setattr__(self, "particles", p)


def rgo_drift(problem, schedule, t, x, x0):
    """Drift of the inner chain at clean-signal state x0, conditioning
    point (t, x):

        s_prior(x0) + (mu_t / sigma_t^2) (x - mu_t x0) - grad l_y(x0),

    the gradient of the conditional log density above. Requires t > 0.
    Batched over leading axes of x0 (x broadcasts against it).
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    m_t = schedule.mu(t)
    s2_t = schedule.sigma2(t)
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    return (
        problem.prior.score(x0)
        + (m_t / s2_t) * (x - m_t * x0)
        - problem.likelihood.grad_neg_log(x0)
    )


def rgo_step_size(snr, mean_drift_norm, d, clamp=DEFAULT_STEP_CLAMP):
    """SNR step rule: dt = 2 (snr sqrt(d) / max(|drift|, 1e-12))^2, clamped."""
    if not snr > 0:
        raise ValueError("snr must be positive")
    if mean_drift_norm < 0:
        raise ValueError("mean_drift_norm must be nonnegative")
    dt = 2.0 * (snr * math.sqrt(d) / max(mean_drift_norm, _NORM_FLOOR)) ** 2
    return min(max(dt, clamp[0]), clamp[1])


def _step_sizes(snr, norms, d, clamp):
    """Vectorized twin of rgo_step_size for per-trajectory norms (B,)."""
    dt = 2.0 * (snr * math.sqrt(d) / np.maximum(norms, _NORM_FLOOR)) ** 2
    return np.clip(dt, clamp[0], clamp[1])


def _drift_batch(problem, m_t, s2_t, x, chains):
    """Inner drift on chains (B, M, d) at conditioning points x (B, d)."""
    return (
        problem.prior.score(chains)
        + (m_t / s2_t) * (x[:, None, :] - m_t * chains)
        - problem.likelihood.grad_neg_log(chains)
    )


def _evolve_chains(
    problem, schedule, t, x, chains, config, noise, want_tail=False, check_steps=False
):
    """Evolve chains (B, M, d) for noise.shape[0] inner steps at fixed t.

    x (B, d) are the conditioning points; noise has shape (n, B, M, d). The
    step size is per trajectory: the SNR rule applied to the drift norm
    averaged over that trajectory's M chains, so each trajectory evolves
    exactly as it would alone.

    Returns (chains, dhat, tail): dhat (B, d) is the mean of post-burn-in
    particles, tail (q, B, M, d) the particles themselves when want_tail.
    With check_steps, raises DivergenceError at the first non-finite state
    (intended for single-trajectory use); otherwise non-finite values
    propagate into dhat for the caller to mask.
    """
    m_t = schedule.mu(t)
    s2_t = schedule.sigma2(t)
    n = noise.shape[0]
    b, _, d = chains.shape
    q = max(1, math.ceil((1.0 - config.burn_in_fraction) * n))
    tail_sum = np.zeros((b, d))
    tail = [] if want_tail else None
    for k in range(n):
        drift = _drift_batch(problem, m_t, s2_t, x, chains)
        norms = np.mean(np.linalg.norm(drift, axis=2), axis=1)
        dt = _step_sizes(config.snr_in, norms, d, config.step_clamp)
        chains = (
            chains
            + drift * dt[:, None, None]
            + np.sqrt(2.0 * dt)[:, None, None] * noise[k]
        )
        if check_steps and not np.all(np.isfinite(chains)):
            raise DivergenceError(
                f"non-finite chain state at t={t}, inner step {k}, x={x}"
            )
        if k >= n - q:
            tail_sum += chains.mean(axis=1)
            if want_tail:
                tail.append(chains)
    dhat = tail_sum / q
    return chains, dhat, (np.stack(tail) if want_tail else None)


def _init_chains(rng, m_chains, d):
    """Standard-Gaussian chain initials drawn as one flat block."""
    return rng.standard_normal(m_chains * d).reshape(m_chains, d)


def rgo_sample(problem, schedule, t, x, config, init=None, rng=None):
    """Run the inner chains at (t, x) and pool post-burn-in particles.

    init is a ParticleBatch whose final m_chains rows seed the chains (chain
    reuse), or None for standard-Gaussian initials. With n_in = 0 the init
    batch's own tail (last ceil((1-rho) m) rows) is returned unchanged.
    Deterministic given the rng state; noise is drawn as one block per step
    in fixed chain order.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    y = getattr(problem.likelihood, "y", None)

    if config.n_in == 0:
        if init is None:
            raise ValueError("n_in = 0 requires an init batch")
        rows = init.particles
        q0 = max(1, math.ceil((1.0 - config.burn_in_fraction) * rows.shape[0]))
        return ParticleBatch(rows[-q0:], source=(t, x, y))

    if init is None:
        chains = _init_chains(rng, config.m_chains, d)
    else:
        if init.particles.shape[0] < config.m_chains:
            raise ValueError("init batch has fewer rows than m_chains")
        chains = init.particles[-config.m_chains :]
    noise = rng.standard_normal(config.n_in * config.m_chains * d).reshape(
        config.n_in, 1, config.m_chains, d
    )
    _, _, tail = _evolve_chains(
        problem,
        schedule,
        t,
        x[None, :],
        chains[None, :, :],
        config,
        noise,
        want_tail=True,
        check_steps=True,
    )
    particles = tail[:, 0].reshape(-1, d)
    return ParticleBatch(particles, source=(t, x, y))


def estimate_denoiser(batch):
    """Monte-Carlo denoiser estimate: the mean of the particle batch."""
    if batch.particles.shape[0] == 0:
        raise ValueError("empty particle batch")
    return batch.particles.mean(axis=0)


def estimate_posterior_score(problem, schedule, t, x, config, init=None, rng=None):
    """Posterior score estimate at (t, x):
    -x / sigma_t^2 + (mu_t / sigma_t^2) * dhat with dhat the denoiser
    estimate from a fresh particle batch."""
    batch = rgo_sample(problem, schedule, t, x, config, init=init, rng=rng)
    dhat = estimate_denoiser(batch)
    x = np.asarray(x, dtype=float)
    return -x / schedule.sigma2(t) + (schedule.mu(t) / schedule.sigma2(t)) * dhat
