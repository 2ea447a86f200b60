"""Conditional normalizing flow with linear-Gaussian latent dynamics.

Observations are mapped to latents whose mean follows mu_t = A mu_{t-1} + b;
anomalies are windows whose whitened latents fail a multivariate
Kolmogorov-Smirnov test against N(0, I).
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
