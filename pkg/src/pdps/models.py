"""Problem definitions: mixture priors, Gaussian likelihoods, model constants.

A posterior-sampling problem couples a prior score provider with a
likelihood. The isotropic Gaussian-mixture prior is fully analytic: score,
log density, Hessian and the noise-conditional mean E[X0 | Xt = x] all have
closed forms, which the oracles and baselines reuse.

Per-model constants gate the sampler diagnostics: ``alpha`` bounds the
eigenvalues of the Hessian of the prior log-density in magnitude (its upper
part is what limits how late the inner chains stay log-concave), ``v_sg2``
is the sub-Gaussian variance proxy of the prior, and ``c_sg`` the matching
mass bound E[exp(|X|^2 / v_sg2)].
"""

from __future__ import annotations

import abc
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .schedule import mu, sigma2, underline_t

__all__ = [
    "PriorScoreProvider",
    "IsotropicGaussianMixture",
    "Likelihood",
    "LinearGaussianLikelihood",
    "NonlinearGaussianLikelihood",
    "ProblemSpec",
    "ModelConstants",
    "gmm_score",
    "gmm_log_density",
    "gmm_hessian",
    "gmm_time_t",
    "gmm_prior_denoiser",
    "gmm_constants",
    "condition_number",
    "lsi_bound",
]


class PriorScoreProvider(abc.ABC):
    """Interface for priors the sampler can use.

    Implementations expose the dimension ``d`` and ``score``; the optional
    operations unlock exact oracles (``log_density_unnormalized``), baselines
    (``denoiser``) and diagnostics (``sample``).
    """

    d: int

    @abc.abstractmethod
    def score(self, x):
        """Gradient of the log prior density at x, shape (..., d) -> (..., d)."""

    def log_density_unnormalized(self, x):
        """Log prior density up to an additive constant, shape (..., d) -> (...)."""
        raise NotImplementedError

    def denoiser(self, t, x):
        """E[X0 | Xt = x] under the forward noising of the prior."""
        raise NotImplementedError

    def sample(self, rng, n):
        """Draw n prior samples, shape (n, d)."""
        raise NotImplementedError


class IsotropicGaussianMixture(PriorScoreProvider):
    """Mixture sum_k w_k N(m_k, sigma_k^2 I) with per-component isotropic
    variances. Immutable after construction.

    Parameters
    ----------
    weights : (K,) probabilities, positive, summing to 1.
    means : (K, d) component means; a (K,) array is read as K means in d=1.
    variances : (K,) positive per-component variances.
    """

    def __init__(self, weights, means, variances):
        w = np.asarray(weights, dtype=float)
        m = np.asarray(means, dtype=float)
        v = np.asarray(variances, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if w.ndim != 1 or m.ndim != 2 or v.ndim != 1:
            raise ValueError("weights (K,), means (K, d), variances (K,) expected")
        if not (len(w) == len(m) == len(v)):
            raise ValueError("component counts disagree")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-8:
            raise ValueError(f"weights must sum to 1, got {w.sum()}")
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        self.weights = w / w.sum()
        self.means = m
        self.variances = v
        self.K = len(w)
        self.d = m.shape[1]

    def score(self, x):
        return gmm_score(self, x)

    def log_density_unnormalized(self, x):
        # Normalized, which is a valid unnormalized log density as well.
        return gmm_log_density(self, x)

    def denoiser(self, t, x):
        return gmm_prior_denoiser(self, t, x)

    def sample(self, rng, n):
        comps = rng.choice(self.K, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.d))
        return self.means[comps] + np.sqrt(self.variances[comps])[:, None] * eps

    def hessian(self, x):
        return gmm_hessian(self, x)


def _log_responsibilities(gmm, x):
    """Log weights, per-component log densities and log responsibilities.

    x has shape (..., d); returns (log_comp, log_den, diff) with
    log_comp (..., K), log_den (...), diff (..., K, d) = x - m_k.
    """
    x = np.asarray(x, dtype=float)
    diff = x[..., None, :] - gmm.means
    sq = np.sum(diff * diff, axis=-1)
    log_comp = (
        np.log(gmm.weights)
        - 0.5 * sq / gmm.variances
        - 0.5 * gmm.d * np.log(2.0 * np.pi * gmm.variances)
    )
    log_den = logsumexp(log_comp, axis=-1)
    return log_comp, log_den, diff


def gmm_log_density(gmm, x):
    """Log density of the mixture at x, shape (..., d) -> (...)."""
    _, log_den, _ = _log_responsibilities(gmm, x)
    if log_den.ndim == 0:
        return float(log_den)
    return log_den


def gmm_score(gmm, x):
    """Score of the mixture: responsibility-weighted component scores.

    score(x) = sum_k xi_k(x) * (-(x - m_k) / sigma_k^2), with the
    responsibilities xi_k computed in log space for stability.
    """
    log_comp, log_den, diff = _log_responsibilities(gmm, x)
    xi = np.exp(log_comp - log_den[..., None])
    comp_scores = -diff / gmm.variances[:, None]
    return np.sum(xi[..., None] * comp_scores, axis=-2)


def gmm_hessian(gmm, x):
    """Hessian of the mixture log density, shape (..., d) -> (..., d, d).

    H = sum_k xi_k (s_k s_k^T - I / sigma_k^2) - s s^T with s_k the
    component scores and s the mixture score.
    """
    log_comp, log_den, diff = _log_responsibilities(gmm, x)
    xi = np.exp(log_comp - log_den[..., None])
    s_k = -diff / gmm.variances[:, None]
    s = np.sum(xi[..., None] * s_k, axis=-2)
    outer_k = s_k[..., :, None] * s_k[..., None, :]
    h = np.sum(xi[..., None, None] * outer_k, axis=-3)
    h -= np.sum(xi / gmm.variances, axis=-1)[..., None, None] * np.eye(gmm.d)
    h -= s[..., :, None] * s[..., None, :]
    return h


def gmm_time_t(gmm, t):
    """Mixture of the forward process at time t: means mu_t m_k and
    variances mu_t^2 sigma_k^2 + sigma_t^2 (weights unchanged)."""
    m = mu(t)
    return IsotropicGaussianMixture(
        gmm.weights, m * gmm.means, m * m * gmm.variances + sigma2(t)
    )


def gmm_prior_denoiser(gmm, t, x):
    """E[X0 | Xt = x] for the mixture prior, via the time-t score:
    D(t, x) = (x + sigma_t^2 * grad log pi_t(x)) / mu_t. Requires t > 0."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    x = np.asarray(x, dtype=float)
    s_t = gmm_score(gmm_time_t(gmm, t), x)
    return (x + sigma2(t) * s_t) / mu(t)


class Likelihood(abc.ABC):
    """Negative log-likelihood x -> l_y(x) and its gradient."""

    n: int
    d = None  # input dimension when known, else None

    @abc.abstractmethod
    def neg_log(self, x):
        """l_y(x), shape (..., d) -> (...)."""

    @abc.abstractmethod
    def grad_neg_log(self, x):
        """grad l_y(x), shape (..., d) -> (..., d)."""


class LinearGaussianLikelihood(Likelihood):
    """Observation y = A x + noise, noise ~ N(0, noise_std^2 I):
    neg_log(x) = |y - A x|^2 / (2 noise_std^2)."""

    def __init__(self, A, y, noise_std):
        A = np.asarray(A, dtype=float)
        y = np.asarray(y, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be an (n, d) matrix")
        if y.ndim != 1 or y.shape[0] != A.shape[0]:
            raise ValueError("y must be an (n,) vector matching A")
        if not noise_std > 0:
            raise ValueError("noise_std must be positive")
        self.A = A
        self.y = y
        self.noise_std = float(noise_std)
        self.n, self.d = A.shape

    def neg_log(self, x):
        r = np.asarray(x, dtype=float) @ self.A.T - self.y
        out = 0.5 * np.sum(r * r, axis=-1) / self.noise_std**2
        return float(out) if out.ndim == 0 else out

    def grad_neg_log(self, x):
        r = np.asarray(x, dtype=float) @ self.A.T - self.y
        return (r @ self.A) / self.noise_std**2


class NonlinearGaussianLikelihood(Likelihood):
    """Observation y = F(x) + noise with a user-supplied differentiable map.

    f(x) returns the (n,) forward value at a single (d,) point; jt_vec(x, v)
    returns J_F(x)^T v, shape (d,). Batched inputs are looped row by row.
    """

    def __init__(self, f, jt_vec, y, noise_std, d=None):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1:
            raise ValueError("y must be an (n,) vector")
        if not noise_std > 0:
            raise ValueError("noise_std must be positive")
        self.f = f
        self.jt_vec = jt_vec
        self.y = y
        self.noise_std = float(noise_std)
        self.n = y.shape[0]
        self.d = d

    def _rows(self, x):
        x = np.asarray(x, dtype=float)
        return x, x.reshape(-1, x.shape[-1])

    def neg_log(self, x):
        x, rows = self._rows(x)
        vals = np.array(
            [0.5 * np.sum((self.y - np.asarray(self.f(r))) ** 2) for r in rows]
        )
        vals /= self.noise_std**2
        return float(vals[0]) if x.ndim == 1 else vals.reshape(x.shape[:-1])

    def grad_neg_log(self, x):
        x, rows = self._rows(x)
        grads = np.array(
            [self.jt_vec(r, np.asarray(self.f(r)) - self.y) for r in rows]
        )
        grads /= self.noise_std**2
        return grads.reshape(x.shape)


@dataclass(frozen=True)
class ProblemSpec:
    """A posterior-sampling problem: prior plus likelihood for one
    observation. Dimensions are validated at construction."""

    prior: PriorScoreProvider
    likelihood: Likelihood

    def __post_init__(self):
        if self.likelihood.d is not None and self.likelihood.d != self.prior.d:
            raise ValueError(
                f"likelihood expects d={self.likelihood.d}, prior has d={self.prior.d}"
            )

    @property
    def d(self):
        return self.prior.d

    @property
    def n(self):
        return self.likelihood.n


@dataclass(frozen=True)
class ModelConstants:
    """Constants the diagnostics run on: curvature bound alpha, sub-Gaussian
    variance proxy v_sg2 and mass bound c_sg. All positive."""

    alpha: float
    v_sg2: float
    c_sg: float

    def __post_init__(self):
        for name in ("alpha", "v_sg2", "c_sg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _max_abs_eig_power(h_batch, rng, n_iter=128):
    """Largest eigenvalue magnitude per (P, d, d) symmetric matrix by power
    iteration (converges to the dominant-magnitude eigenpair)."""
    p, d, _ = h_batch.shape
    v = rng.standard_normal((p, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(n_iter):
        w = np.einsum("pij,pj->pi", h_batch, v)
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        v = np.where(norms > 0, w / np.maximum(norms, 1e-300), v)
    lam = np.einsum("pi,pij,pj->p", v, h_batch, v)
    return np.abs(lam)


def gmm_constants(gmm, margin=0.1, probe_count=256):
    """Estimate (alpha, v_sg2, c_sg) for a mixture prior.

    v_sg2 = 2 max_k sigma_k^2 * (1 + margin); the margin keeps the strict
    inequality the mass bound needs, so c_sg stays finite.

    alpha is the largest magnitude among eigenvalues of the Hessian of
    log pi_0: a dense grid scan in d=1, otherwise power iteration on the
    analytic Hessian at probe_count prior draws plus the component means.
    A Gaussian likelihood only lowers the upper curvature, so it is ignored
    (conservative).

    c_sg is the Monte-Carlo average of exp(|X|^2 / v_sg2) over probe_count
    prior samples, accumulated in log space. Heavy-tailed for separated
    modes, where the estimate is a (possibly severe) underestimate; it feeds
    diagnostics only. Probe draws use a fixed internal seed so repeated
    calls agree.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    if np.any(np.asarray(gmm.variances) <= 0):
        raise ValueError("degenerate mixture component")
    v_sg2 = 2.0 * float(np.max(gmm.variances)) * (1.0 + margin)

    rng = np.random.default_rng(20240901)
    if gmm.d == 1:
        sig = np.sqrt(gmm.variances)
        lo = min(float(np.min(gmm.means[:, 0] - 6.0 * sig)), -6.0)
        hi = max(float(np.max(gmm.means[:, 0] + 6.0 * sig)), 6.0)
        grid = np.arange(lo, hi + 1e-3, 1e-3)[:, None]
        h = gmm_hessian(gmm, grid)[:, 0, 0]
        alpha = float(np.max(np.abs(h)))
    else:
        probes = np.concatenate([gmm.sample(rng, probe_count), gmm.means], axis=0)
        h = gmm_hessian(gmm, probes)
        alpha = float(np.max(_max_abs_eig_power(h, rng)))

    draws = gmm.sample(rng, probe_count)
    log_terms = np.sum(draws * draws, axis=1) / v_sg2
    c_sg = float(np.exp(logsumexp(log_terms) - math.log(probe_count)))
    return ModelConstants(alpha=alpha, v_sg2=v_sg2, c_sg=c_sg)


def condition_number(problem, prior_samples=8192, search_budget=8, rng=None):
    """Estimate kappa_y = sup_x exp(-l_y(x)) / E_prior[exp(-l_y(X))].

    The supremum is approximated by multi-start local minimization of l_y
    from search_budget prior draws; the denominator by a Monte-Carlo mean
    over prior_samples draws, accumulated in log space. Returns +inf with a
    warning when every likelihood value underflows. Always >= 1 up to
    Monte-Carlo noise.
    """
    if prior_samples < 1 or search_budget < 1:
        raise ValueError("budgets must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    lik = problem.likelihood

    starts = problem.prior.sample(rng, search_budget)
    best = math.inf
    for x0 in starts:
        res = minimize(
            lambda z: float(lik.neg_log(z)),
            x0,
            jac=lambda z: np.asarray(lik.grad_neg_log(z), dtype=float),
            method="L-BFGS-B",
        )
        best = min(best, float(res.fun), float(lik.neg_log(x0)))

    draws = problem.prior.sample(rng, prior_samples)
    neg = -np.asarray(lik.neg_log(draws), dtype=float)
    log_mean = logsumexp(neg) - math.log(prior_samples)
    if not np.isfinite(log_mean):
        warnings.warn("all likelihood values underflowed; condition number is +inf")
        return math.inf
    return float(np.exp(-best - log_mean))


def lsi_bound(schedule, t_end, kappa, c_sg, v_sg2):
    """Log-Sobolev constant bound of the time-t_end posterior:
    12 sigma_T^2 exp(2 * (sigma_T^2 + 2 mu_T^2 V^2) / (sigma_T^2 - 2 mu_T^2 V^2)
    * ln(kappa^2 C^2)). Requires t_end above the lower threshold, where the
    denominator is positive.
    """
    if not t_end > underline_t(v_sg2):
        raise ValueError(
            f"t_end={t_end} must exceed the lower threshold {underline_t(v_sg2)}"
        )
    m2 = schedule.mu(t_end) ** 2
    s2 = schedule.sigma2(t_end)
    ratio = (s2 + 2.0 * m2 * v_sg2) / (s2 - 2.0 * m2 * v_sg2)
    log_bound = math.log(12.0 * s2) + 2.0 * ratio * math.log(kappa**2 * c_sg**2)
    # Blows up as t_end approaches the threshold; saturate to inf past the
    # float range instead of raising.
    return math.exp(log_bound) if log_bound < 709.0 else math.inf
