"""Pure-numpy fixed-effect sweep, the fallback for the compiled kernel.

The per-coordinate Gibbs pass is sequential only through state flips: the
residual correlation vector is unchanged between them, so inclusion
probabilities are evaluated for whole segments at once and the segment is
cut at the first realized flip.  Sparse chains flip rarely, which makes
this close to the compiled kernel's speed in the common case.
"""

import math

import numpy as np


def _segment_probs(r, ssq, slab, sigma2, inv_t, pi_a):
    """Vectorized collapsed inclusion probabilities for one segment."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if inv_t == 1.0:
            log_det = 0.5 * np.log1p(slab * ssq / sigma2)
            quad = r * r / (2.0 * (sigma2 * ssq + sigma2 * sigma2 / slab))
            logit_prior = np.log(pi_a) - np.log1p(-pi_a)
        else:
            b = ssq / sigma2 + 1.0 / slab
            log_det = (-0.5 * math.log(2.0 * math.pi / inv_t)
                       + 0.5 * inv_t * np.log(2.0 * math.pi * slab)
                       + 0.5 * np.log(b))
            quad = inv_t * r * r / (2.0 * b * sigma2 * sigma2)
            logit_prior = inv_t * (np.log(pi_a) - np.log1p(-pi_a))
        logit = -log_det + np.where(np.isfinite(quad), quad, 0.0) + logit_prior
        prob = np.where(logit >= 0,
                        1.0 / (1.0 + np.exp(-logit)),
                        np.exp(logit) / (1.0 + np.exp(logit)))
    prob = np.where(pi_a <= 0.0, 0.0, prob)
    prob = np.where(pi_a >= 1.0, 1.0, prob)
    return prob


def fixed_sweep(xt_resid, beta, b_state, u, pi_a, slab_var, sigma2, inv_t,
                wssq, cache, coords, rb_prob, current_iter):
    """One collapsed-Bernoulli pass over ``coords`` in ascending order.

    Mutates xt_resid, beta, b_state and rb_prob in place; returns the
    number of activation flips.  ``u`` supplies one uniform per
    coordinate, consumed positionally so that any kernel backing this
    signature reproduces the same chain from the same stream.
    """
    n_flips = 0
    start = 0
    while start < len(coords):
        js = coords[start:]
        ssq = wssq[js]
        r = xt_resid[js] + ssq * beta[js]
        prob = _segment_probs(r, ssq, slab_var[js], sigma2, inv_t, pi_a[js])
        rb_prob[js] = prob
        draws = u[js] < prob
        flips = np.flatnonzero(draws != (b_state[js] == 1))
        if len(flips) == 0:
            break
        h = int(flips[0])
        j = int(js[h])
        col = cache.ensure_column(j, current_iter)
        if draws[h]:
            # provisional value: the conditional posterior mean, until the
            # joint active-set redraw at sweep end
            mean = r[h] / (ssq[h] + sigma2 / slab_var[j])
            beta[j] = mean
            b_state[j] = 1
            xt_resid -= mean * col
        else:
            xt_resid += beta[j] * col
            beta[j] = 0.0
            b_state[j] = 0
        n_flips += 1
        start = start + h + 1
    return n_flips
