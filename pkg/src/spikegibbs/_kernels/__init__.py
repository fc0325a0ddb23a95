"""Sweep kernel selection: compiled extension if available, numpy fallback.

Set SPIKEGIBBS_PURE_PYTHON=1 to force the fallback (used by the kernel
benchmark and equivalence tests).
"""

import os

from . import pysweep

HAVE_COMPILED = False
_impl = pysweep

if not os.environ.get("SPIKEGIBBS_PURE_PYTHON"):
    try:
        from . import _sweep as _compiled

        HAVE_COMPILED = True
    except ImportError:
        _compiled = None

if HAVE_COMPILED:
    def fixed_sweep(xt_resid, beta, b_state, u, pi_a, slab_var, sigma2,
                    inv_t, wssq, cache, coords, rb_prob, current_iter):
        return _compiled.fixed_sweep_cached(
            xt_resid, beta, b_state, u, pi_a, slab_var, float(sigma2),
            float(inv_t), wssq, cache, coords, rb_prob, int(current_iter))
else:
    fixed_sweep = pysweep.fixed_sweep

KERNEL_NAME = "compiled" if HAVE_COMPILED else "python"
