"""Sparse spike-and-slab Gibbs sampling with grouped effects.

Exact collapsed inclusion draws for fixed effects, an eigen-reduced
switching chain for group activation, t/robit/logistic noise models,
compressed binary chain storage, and equi-energy tempering.
"""

__version__ = "0.1.0"

from ._kernels import KERNEL_NAME  # noqa: F401
