"""Warm-start sampling of the diffusion terminal distribution.

Rather than pretending the time-T marginal is standard Gaussian, the
terminal posterior q_T(.|y) is sampled directly: outer Euler-Maruyama
Langevin steps driven by the Monte-Carlo posterior score at fixed time T,
with the SNR step rule applied to the running mean of the trajectory's
score norms (a state-dependent step would bias the ergodic averages, see
_warm_phase). With chain_reuse
the inner particle chains persist across outer steps, so they equilibrate
cumulatively while the outer state moves.

The private `_warm_phase` evolves B trajectories at once (each owning its
generator, so batched rows agree bit for bit with solo runs); the public
`warm_start` is the single-trajectory view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rgo import (
    DivergenceError,
    ParticleBatch,
    RgoConfig,
    _evolve_chains,
    _init_chains,
    _step_sizes,
)

__all__ = ["WarmStartConfig", "warm_start"]


@dataclass(frozen=True)
class WarmStartConfig:
    """Outer-loop parameters: n_out Langevin steps at time T with SNR ratio
    snr_out; inner holds the per-evaluation chain configuration. n_out = 0
    is allowed as an explicit no-op (the initial Gaussian draw is returned).
    """

    n_out: int = 400
    snr_out: float = 0.16
    chain_reuse: bool = True
    inner: RgoConfig = field(default_factory=lambda: RgoConfig(n_in=50))

    def __post_init__(self):
        if self.n_out < 0:
            raise ValueError("n_out must be nonnegative")
        if not self.snr_out > 0:
            raise ValueError("snr_out must be positive")
        if self.inner.n_in < 1:
            raise ValueError("warm start requires inner n_in >= 1")


def _score_step(
    problem,
    schedule,
    t,
    x,
    chains,
    inner_cfg,
    gens,
    score_fn=None,
    outer_noise=True,
    fresh_chains=False,
    want_tail=False,
):
    """One posterior-score evaluation for B trajectories at time t.

    Each trajectory's randomness for the step is drawn as a single flat
    block from its own generator, laid out as [fresh chain initials when
    fresh_chains][inner noise][one outer increment when outer_noise], which
    makes consumption identical for solo and batched runs. With score_fn
    the estimator is bypassed entirely and only the outer increment is
    drawn. Returns (score, chains, xi, tail).
    """
    b, d = x.shape
    if score_fn is not None:
        xi = None
        if outer_noise:
            xi = np.stack([g.standard_normal(d) for g in gens])
        return score_fn(t, x), chains, xi, None

    n_in, m = inner_cfg.n_in, inner_cfg.m_chains
    n_fresh = m * d if fresh_chains else 0
    n_noise = n_in * m * d
    total = n_fresh + n_noise + (d if outer_noise else 0)
    blocks = np.empty((b, total))
    for i, g in enumerate(gens):
        blocks[i] = g.standard_normal(total)
    if fresh_chains:
        chains = blocks[:, :n_fresh].reshape(b, m, d).copy()
    noise = blocks[:, n_fresh : n_fresh + n_noise].reshape(b, n_in, m, d)
    noise = np.ascontiguousarray(noise.transpose(1, 0, 2, 3))
    xi = blocks[:, n_fresh + n_noise :] if outer_noise else None

    chains, dhat, tail = _evolve_chains(
        problem, schedule, t, x, chains, inner_cfg, noise, want_tail=want_tail
    )
    s2 = schedule.sigma2(t)
    score = -x / s2 + (schedule.mu(t) / s2) * dhat
    return score, chains, xi, tail


def _mask_divergent(x, chains, alive, failures, stage, step):
    """Mark trajectories that went non-finite, zero them, record (stage,
    step, index). Already-dead rows are kept at zero."""
    bad = ~np.all(np.isfinite(x), axis=1)
    if bad.any():
        for idx in np.nonzero(bad & alive)[0]:
            failures.append((stage, step, int(idx)))
        alive = alive & ~bad
        x[bad] = 0.0
        if chains is not None:
            chains[bad] = 0.0
    return alive


def _warm_phase(problem, schedule, t_end, config, gens, score_fn=None, want_tail=False):
    """Run the outer loop for B = len(gens) trajectories at time t_end.

    Returns (x, chains, tail, x_eval, alive, failures): final states (B, d),
    final inner chains (B, M, d) or None under score_fn, the last inner tail
    stack when want_tail, the states at which that tail was generated, the
    survival mask, and (stage, step, index) failure records.
    """
    b = len(gens)
    d = problem.d
    x = np.stack([g.standard_normal(d) for g in gens])
    chains = None
    if score_fn is None:
        chains = np.stack([_init_chains(g, config.inner.m_chains, d) for g in gens])
    alive = np.ones(b, dtype=bool)
    failures = []
    tail = None
    x_eval = None
    # The SNR rule is applied to the running mean of each trajectory's own
    # score norms rather than the instantaneous norm. A step size that is a
    # function of the current state reweights the chain's occupation measure
    # by 1/dt(x) and visibly inflates the stationary variance; the running
    # mean converges to a per-trajectory constant, which removes that bias
    # while keeping batched rows identical to solo runs.
    norm_sum = np.zeros(b)
    for k in range(config.n_out):
        last = k == config.n_out - 1
        score, chains, xi, tail_k = _score_step(
            problem,
            schedule,
            t_end,
            x,
            chains,
            config.inner,
            gens,
            score_fn=score_fn,
            outer_noise=True,
            fresh_chains=(score_fn is None and not config.chain_reuse),
            want_tail=want_tail and last,
        )
        if want_tail and last:
            tail = tail_k
            x_eval = x
        norm_sum += np.linalg.norm(score, axis=1)
        dt = _step_sizes(config.snr_out, norm_sum / (k + 1), d,
                         config.inner.step_clamp)
        x = x + score * dt[:, None] + np.sqrt(2.0 * dt)[:, None] * xi
        alive = _mask_divergent(x, chains, alive, failures, "warm", k)
    return x, chains, tail, x_eval, alive, failures


def warm_start(problem, schedule, t_end, config, rng, score_estimator=None):
    """Sample the terminal posterior at time t_end > 0 by outer Langevin
    dynamics from an N(0, I) start.

    Returns (x, batch): the final outer state and the particle batch of the
    last inner evaluation (whose final m_chains rows serve chain reuse).
    With n_out = 0 the initial Gaussian draw is returned together with the
    fresh chain initials. score_estimator, a callable (t, x (d,)) -> (d,),
    replaces the Monte-Carlo estimator (oracle injection for tests); the
    batch is then None. Raises DivergenceError with the outer step index.
    """
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    score_fn = None
    if score_estimator is not None:
        def score_fn(t, xs):
            return np.stack([np.asarray(score_estimator(t, row)) for row in xs])

    x, chains, tail, x_eval, _, failures = _warm_phase(
        problem, schedule, t_end, config, [rng], score_fn=score_fn, want_tail=True
    )
    if failures:
        _, step, _ = failures[0]
        raise DivergenceError(f"warm start diverged at outer step {step}")
    if score_fn is not None:
        return x[0], None
    y = getattr(problem.likelihood, "y", None)
    if tail is None:
        # n_out = 0: no evaluation ran; hand back the fresh chain states.
        return x[0], ParticleBatch(chains[0], source=(t_end, None, y))
    d = problem.d
    batch = ParticleBatch(tail[:, 0].reshape(-1, d), source=(t_end, x_eval[0], y))
    return x[0], batch
