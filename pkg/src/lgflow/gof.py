"""Multivariate Kolmogorov-Smirnov test against the standard normal product CDF.

The statistic compares the lower-orthant empirical CDF with
``Phi_d(p) = prod_i Phi(p_i)`` at the sample points, using both the closed
count and its left limit. The critical value is the tight multivariate DKW
bound ``P(sup |F_n - F| > eps) <= d (n + 1) exp(-2 n eps^2)`` solved for eps.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from . import kernels

EXPECTED = "expected"
UNEXPECTED = "unexpected"


@dataclass(frozen=True)
class GofConfig:
    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class KsResult:
    statistic: float
    critical_value: float
    n: int
    d: int
    alpha: float

    @property
    def compliant(self):
        return self.statistic < self.critical_value


def std_normal_cdf(x):
    """Phi(x) = erfc(-x / sqrt(2)) / 2; scalar in, scalar out."""
    out = 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def product_cdf(samples):
    return np.prod(std_normal_cdf(samples), axis=1)


def _as_samples(samples):
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError("need a non-empty (n, d) sample matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return x


def mv_ks_statistic(samples):
    x = _as_samples(samples)
    return kernels.orthant_ks(x, product_cdf(x))


def critical_value(n, d, alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return min(1.0, math.sqrt(math.log(d * (n + 1) / alpha) / (2.0 * n)))


def decide(s, tau):
    """H(s): expected iff s < tau."""
    return EXPECTED if s < tau else UNEXPECTED


def ks_test(samples, alpha=0.05):
    x = _as_samples(samples)
    n, d = x.shape
    return KsResult(kernels.orthant_ks(x, product_cdf(x)), critical_value(n, d, alpha), n, d, alpha)
