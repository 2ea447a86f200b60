"""Sliding-window MV-KS scoring of whitened latents, NLL scoring and the FIT diagnostic.

Latent index ``i`` corresponds to observation ``t = k + i``. Per-timestep
outputs have length T; the first ``k`` entries (context only) are 0 / False.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import mu_init, unroll, whiten
from .flow import context_windows, normalize
from .gof import KsResult, critical_value, product_cdf
from .training import LOG_2PI, prepare_observations


@dataclass(frozen=True)
class WindowScore:
    t_start: int  # observation index of the first point in the window
    w: int
    s: float
    tau: float

    @property
    def flag(self):
        return self.s >= self.tau


@dataclass
class LatentTrajectory:
    whitened: np.ndarray  # (T - k, D)
    mu: np.ndarray  # (T - k, D)
    logdet: np.ndarray  # (T - k,)
    z: np.ndarray = field(repr=False, default=None)


@dataclass
class WindowScores:
    windows: list
    score: np.ndarray  # per latent index, max s over covering windows
    flags: np.ndarray


@dataclass
class DetectionResult:
    ks_score: np.ndarray
    ks_flags: np.ndarray
    nll_score: np.ndarray
    windows: list
    context: int
    w: int
    stride: int
    alpha: float
    labels: np.ndarray = None


@dataclass
class FitReport:
    n_windows: int
    n_compliant: int
    results: list
    alpha: float
    margin: float

    @property
    def fit_fraction(self):
        return self.n_compliant / self.n_windows if self.n_windows else 0.0

    @property
    def trustworthy(self):
        return self.fit_fraction >= 1.0 - self.alpha - self.margin


def latent_trajectory(flow, ldm, values, k):
    values = prepare_observations(values)
    ctx = context_windows(values, k)
    z, logdet = normalize(flow, values[k:], ctx)
    # scored step j sits one transition after mu_0
    mu = unroll(ldm, mu_init(ldm), len(z) + 1)[1:]
    return LatentTrajectory(whiten(z, mu), mu, logdet, z)


def score_windows(whitened, w, stride=1, alpha=0.05, t_offset=0):
    """MV-KS on windows ``[i, i + w)`` for ``i = 0, stride, 2*stride, ...``.

    Each latent index gets the max statistic over the windows covering it
    (0 if none does); its flag compares that max with the shared critical value.
    ``t_offset`` shifts the reported window starts (pass ``k`` to get
    observation indices).
    """
    z = np.asarray(whitened, dtype=np.float64)
    n, d = z.shape
    if w < 1 or w > n:
        raise ValueError(f"window {w} does not fit a trajectory of length {n}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    tau = critical_value(w, d, alpha)
    stats = kernels.window_ks(z, product_cdf(z), w, stride)
    score = np.zeros(n)
    covered = np.zeros(n, dtype=bool)
    windows = []
    for m, s in enumerate(stats):
        i = m * stride
        np.maximum(score[i:i + w], s, out=score[i:i + w])
        covered[i:i + w] = True
        windows.append(WindowScore(i + int(t_offset), w, float(s), tau))
    flags = covered & (score >= tau)
    return WindowScores(windows, score, flags)


def nll_score(flow, ldm, values, k):
    """Per-timestep -log N(z_t; mu_t, I) - logdet_t; zeros on the context prefix."""
    values = prepare_observations(values)
    lat = latent_trajectory(flow, ldm, values, k)
    D = values.shape[1]
    out = np.zeros(values.shape[0])
    out[k:] = 0.5 * D * LOG_2PI + 0.5 * np.sum(lat.whitened**2, axis=1) - lat.logdet
    return out


def fit_diagnostic(flow, ldm, values, k, w, stride=None, alpha=0.05, margin=0.05):
    """Share of training windows passing the MV-KS test (non-overlapping by default)."""
    lat = latent_trajectory(flow, ldm, values, k)
    return fit_from_latents(lat.whitened, w, stride, alpha, margin)


def fit_from_latents(whitened, w, stride=None, alpha=0.05, margin=0.05):
    ws = score_windows(whitened, w, stride or w, alpha)
    d = np.shape(whitened)[1]
    results = [KsResult(win.s, win.tau, w, d, alpha) for win in ws.windows]
    n_ok = sum(r.compliant for r in results)
    return FitReport(len(results), n_ok, results, alpha, margin)


def recommended_window(D, cap=10_000):
    """min(D^3, cap), never below the 2*D^2 floor."""
    if D < 1:
        raise ValueError("D must be >= 1")
    return max(min(D**3, cap), 2 * D * D)


def detect(flow, ldm, values, k, w, stride=1, alpha=0.05, labels=None):
    values = prepare_observations(values)
    T = values.shape[0]
    lat = latent_trajectory(flow, ldm, values, k)
    ws = score_windows(lat.whitened, w, stride, alpha, t_offset=k)
    ks = np.zeros(T)
    flags = np.zeros(T, dtype=bool)
    ks[k:] = ws.score
    flags[k:] = ws.flags
    D = values.shape[1]
    nll = np.zeros(T)
    nll[k:] = 0.5 * D * LOG_2PI + 0.5 * np.sum(lat.whitened**2, axis=1) - lat.logdet
    return DetectionResult(ks, flags, nll, ws.windows, k, w, stride, alpha,
                           None if labels is None else np.asarray(labels))


def nll_flags(nll, threshold, k):
    """Baseline rule: flag scored timesteps whose NLL exceeds the max training NLL."""
    out = np.asarray(nll) > threshold
    out[:k] = False
    return out


def segments(labels):
    """Half-open [start, end) runs of ones."""
    lab = np.asarray(labels).astype(bool).astype(np.int8)
    edges = np.diff(np.concatenate([[0], lab, [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def windows_overlapping(windows, start, end):
    return [win for win in windows if win.t_start < end and win.t_start + win.w > start]

