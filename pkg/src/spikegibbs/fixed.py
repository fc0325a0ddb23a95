"""Collapsed inclusion draws and conjugate updates for fixed effects.

The inclusion indicator for a coordinate is drawn from its collapsed
conditional: the coefficient is integrated out analytically, leaving a
Bernoulli whose odds depend only on the weighted column sum of squares and
the residual correlation with that coordinate's own contribution removed.
All odds are handled in log space.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteInput, NotPositiveDefinite


@dataclass
class SigmaPrior:
    """Scaled-inverse-chi-square prior for the noise variance."""

    scale: float = 1.0
    dof: float = 1.0


@dataclass
class FixedEffectPrior:
    """Activation and slab settings for the un-grouped coordinates.

    ``tau_f2`` is the slab dispersion on the sigma^2-relative scale: an
    active coefficient has prior variance sigma^2 * tau_f2.  Hyper priors,
    when present, turn pi_a and tau_f2 into sampled hyperparameters.
    """

    pi_a: float = 0.5
    tau_f2: float = 1.0
    pi_a_hyper: tuple | None = None        # Beta(a, b)
    tau_f_hyper: tuple | None = (40.0, 40.0)  # inverse-gamma (shape, scale)
    long_tail_dof: float | None = None     # optional per-sweep slab rescale

    def __post_init__(self):
        pa = np.asarray(self.pi_a, dtype=float)
        if np.any(pa < 0) or np.any(pa > 1):
            raise ValueError("activation probabilities must lie in [0, 1]")
        if np.any(np.asarray(self.tau_f2, dtype=float) <= 0):
            raise ValueError("slab dispersion must be positive")


@dataclass
class NoiseState:
    sigma2: float
    prior: SigmaPrior = field(default_factory=SigmaPrior)

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")


def collapsed_log_odds(xt_resid_j, ssq_j, sigma2, tau_f2_j):
    """Log of P'(B_j=1)/P'(B_j=0) with the coefficient integrated out.

    ``xt_resid_j`` must exclude coordinate j's own contribution and
    ``ssq_j`` is the weighted column sum of squares.  ``tau_f2_j`` is the
    absolute slab variance of the coefficient.  Stable for residual
    correlations up to 1e150.
    """
    if not (math.isfinite(xt_resid_j) and math.isfinite(ssq_j)):
        raise NonFiniteInput("non-finite collapsed-draw input")
    if sigma2 <= 0 or tau_f2_j <= 0 or ssq_j < 0:
        raise NonFiniteInput("sigma2/tau_f2 must be positive, ssq nonnegative")
    ratio = tau_f2_j * (ssq_j / sigma2)
    if math.isinf(ratio):
        log_det = 0.5 * (math.log(tau_f2_j) + math.log(ssq_j) - math.log(sigma2))
    else:
        log_det = 0.5 * math.log1p(ratio)
    denom = 2.0 * (sigma2 * ssq_j + sigma2 * sigma2 / tau_f2_j)
    if math.isinf(denom):
        quad = 0.0
    else:
        quad = (xt_resid_j / denom) * xt_resid_j
    return -log_det + quad


def inclusion_probability(log_odds, pi_a_j):
    """Rao-Blackwellized P(B_j = 1 | rest), computed in log space."""
    if pi_a_j <= 0.0:
        return 0.0
    if pi_a_j >= 1.0:
        return 1.0
    logit = log_odds + math.log(pi_a_j) - math.log1p(-pi_a_j)
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    z = math.exp(logit)
    return z / (1.0 + z)


def draw_inclusion(log_odds, pi_a_j, rng):
    """One Bernoulli indicator draw from the collapsed conditional."""
    prob = inclusion_probability(log_odds, pi_a_j)
    if prob <= 0.0:
        return 0
    if prob >= 1.0:
        return 1
    return int(rng.random() < prob)


def _chol_draw(Q, m, sigma2, rng, temperature=1.0):
    """N(Q^-1 m, T sigma^2 Q^-1) via Cholesky; jitter once on failure."""
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(Q) / Q.shape[0]
        try:
            L = np.linalg.cholesky(Q + jitter * np.eye(Q.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("active-set precision not PD") from exc
    half = np.linalg.solve(L, m)
    mean = np.linalg.solve(L.T, half)
    z = rng.standard_normal(Q.shape[0])
    return mean + math.sqrt(temperature * sigma2) * np.linalg.solve(L.T, z)


def draw_active_beta(active, cache, m, sigma2, prior_diag, rng,
                     block_limit=400, temperature=1.0):
    """Joint Gaussian redraw of the active coefficients.

    ``m`` is the weighted cross-product of the active columns with the
    out-of-set residual.  When the active set exceeds ``block_limit`` the
    draw proceeds over consecutive sub-blocks, each conditioned on the
    current values of the others, to avoid a large Cholesky.
    """
    active = np.asarray(active, dtype=np.int64)
    k = len(active)
    if k == 0:
        return np.zeros(0)
    m = np.asarray(m, dtype=np.float64)
    prior_diag = np.broadcast_to(np.asarray(prior_diag, dtype=np.float64), (k,))

    rows = cache.col_row[active]
    S = cache.pool[rows][:, active]  # weighted Gram restricted to the set

    if k <= block_limit:
        Q = S + np.diag(prior_diag)
        return _chol_draw(Q, m, sigma2, rng, temperature)

    beta = np.zeros(k)
    for start in range(0, k, block_limit):
        sl = slice(start, min(start + block_limit, k))
        others = np.ones(k, dtype=bool)
        others[sl] = False
        m_cond = m[sl] - S[sl][:, others] @ beta[others]
        Q = S[sl][:, sl] + np.diag(prior_diag[sl])
        beta[sl] = _chol_draw(Q, m_cond, sigma2, rng, temperature)
    return beta


def update_sigma2(resid_ss, n, active_betas, prior_diag, prior, rng,
                  temperature=1.0):
    """Conjugate scaled-inverse-chi-square draw for the noise variance.

    ``active_betas``/``prior_diag`` contribute the slab terms of
    coefficients whose prior variance scales with sigma^2; pass empty
    arrays when none do.
    """
    if resid_ss < 0:
        raise ValueError("residual sum of squares must be nonnegative")
    active_betas = np.asarray(active_betas, dtype=np.float64)
    k = len(active_betas)
    slab_ss = 0.0
    if k:
        prior_diag = np.broadcast_to(np.asarray(prior_diag, dtype=np.float64), (k,))
        slab_ss = float(np.sum(active_betas * active_betas * prior_diag))
    dof = n + prior.dof + k
    total = resid_ss + slab_ss + prior.scale * prior.dof
    if temperature != 1.0:
        # P'^(1/T) keeps the inverse-gamma family: shape' = (shape+1)/T - 1.
        shape = dof / 2.0
        rate = total / 2.0
        shape = (shape + 1.0) / temperature - 1.0
        rate = rate / temperature
        if shape <= 0:
            shape = 1e-3
        return rate / rng.gamma(shape)
    return total / (rng.chisquare(dof))


def update_pi_a(active_count, total_count, hyper, rng, temperature=1.0):
    """Beta draw for the shared activation probability."""
    if not 0 <= active_count <= total_count:
        raise ValueError("active count out of range")
    a, b = hyper
    a_post = a + active_count
    b_post = b + total_count - active_count
    if temperature != 1.0:
        a_post = (a_post - 1.0) / temperature + 1.0
        b_post = (b_post - 1.0) / temperature + 1.0
    return rng.beta(a_post, b_post)


def update_tau_f2(active_betas, sigma2, rng, hyper=(40.0, 40.0)):
    """Inverse-gamma redraw of the sigma^2-relative slab dispersion.

    Posterior form (sum beta^2/sigma^2 + s0) / Gamma(k + a0).
    """
    shape0, scale0 = hyper
    active_betas = np.asarray(active_betas, dtype=np.float64)
    k = len(active_betas)
    scale_post = float(np.sum(active_betas ** 2)) / sigma2 + scale0
    shape_post = k + shape0
    return scale_post / rng.gamma(shape_post)


def draw_long_tail_scales(p, dof, rng):
    """Per-coordinate slab multipliers sqrt(nu/chi2_nu) squared."""
    return dof / rng.chisquare(dof, size=p)


def default_priors(n, p, var_y, rng=None):
    """Automatic priors for n << p selection problems.

    pi_a ~ Beta(1, p); sigma^2 ~ scaled-inv-chi-square(0.25 Var(y), n);
    slab dispersion ~ 1/Expo(1) of sigma^2, i.e. inverse-gamma(1, 1) hyper.
    """
    if var_y <= 0:
        raise ValueError("response variance must be positive")
    pi_hyper = (1.0, float(p))
    tau_hyper = (1.0, 1.0)
    tau0 = 1.0
    if rng is not None:
        tau0 = 1.0 / rng.standard_exponential()
    prior = FixedEffectPrior(
        pi_a=1.0 / (1.0 + p),
        tau_f2=tau0,
        pi_a_hyper=pi_hyper,
        tau_f_hyper=tau_hyper,
    )
    noise = NoiseState(sigma2=0.25 * var_y,
                       prior=SigmaPrior(scale=0.25 * var_y, dof=float(n)))
    return prior, noise
