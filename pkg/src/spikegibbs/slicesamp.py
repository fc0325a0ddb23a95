"""Univariate slice sampling with stepping-out, shared by all modules."""

import math


def slice_step(logf, x0, rng, width=1.0, max_steps=50):
    """One slice-sampling update of a univariate log density.

    Stepping-out with initial window ``width`` and at most ``max_steps``
    expansions, then shrinkage.  Returns a new point leaving the density
    invariant.
    """
    fx0 = logf(x0)
    if not math.isfinite(fx0):
        raise ValueError("slice sampler started at a zero-density point")
    level = fx0 + math.log(rng.random())

    u = rng.random()
    left = x0 - width * u
    right = left + width
    j = int(math.floor(max_steps * rng.random()))
    k = max_steps - 1 - j
    while j > 0 and logf(left) > level:
        left -= width
        j -= 1
    while k > 0 and logf(right) > level:
        right += width
        k -= 1

    while True:
        x1 = left + rng.random() * (right - left)
        if logf(x1) > level:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left < 1e-300:
            return x0
