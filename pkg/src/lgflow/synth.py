"""Multivariate sinusoids with labelled amplitude, frequency and noise anomalies.

A series is rendered from its :class:`SignalSpec` plus the anomalies applied so
far, so injections compose: each one rescales amplitude, instantaneous
frequency or noise scale on its interval. Frequency changes integrate the
phase, which keeps the signal continuous at both interval edges (the phase
offset accumulated inside the interval persists afterwards).
"""

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

KINDS = ("amplitude", "frequency", "noise")


@dataclass(frozen=True)
class SignalSpec:
    dims: int = 4
    length: int = 1000
    frequency: tuple = (1 / 50, 1 / 37, 1 / 29, 1 / 23)  # cycles per sample
    amplitude: tuple = (1.0, 1.0, 1.0, 1.0)
    phase: tuple = (0.0, 0.7, 1.9, 3.1)
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.dims < 1 or self.length < 1:
            raise ValueError("dims and length must be >= 1")
        for name in ("frequency", "amplitude", "phase"):
            if len(getattr(self, name)) != self.dims:
                raise ValueError(f"{name} needs {self.dims} entries")
        if any(a < 0 for a in self.amplitude):
            raise ValueError("amplitudes must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class AnomalySpec:
    start: int
    end: int
    kind: str
    factor: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown anomaly kind {self.kind!r}")
        if self.factor <= 0:
            raise ValueError("factor must be positive")
        if not 0 <= self.start < self.end:
            raise ValueError("need 0 <= start < end")


@dataclass
class LabeledSeries:
    values: np.ndarray  # (T, D)
    labels: np.ndarray  # (T,) 0/1
    anomalies: tuple = field(default_factory=tuple)
    meta: dict = field(default_factory=dict)


def render(spec, anomalies=()):
    T, D = spec.length, spec.dims
    amp = np.ones(T)
    freq = np.ones(T)
    noise = np.ones(T)
    labels = np.zeros(T, dtype=np.int64)
    for a in anomalies:
        if a.end > T:
            raise ValueError(f"anomaly [{a.start}, {a.end}) outside series of length {T}")
        scale = {"amplitude": amp, "frequency": freq, "noise": noise}[a.kind]
        scale[a.start:a.end] *= a.factor
        if a.factor != 1.0:
            labels[a.start:a.end] = 1
    f = np.asarray(spec.frequency, dtype=np.float64)
    # phase(t) = phase0 + 2*pi*f*sum_{u<t} freq[u]; equals 2*pi*f*t when unmodified
    steps = np.concatenate([[0.0], np.cumsum(freq[:-1])])
    angle = 2 * np.pi * steps[:, None] * f[None, :] + np.asarray(spec.phase)[None, :]
    clean = np.asarray(spec.amplitude)[None, :] * amp[:, None] * np.sin(angle)
    eps = np.random.default_rng(spec.seed).standard_normal((T, D))
    values = clean + spec.noise_sigma * noise[:, None] * eps
    return LabeledSeries(values, labels, tuple(anomalies))


def generate_base(spec):
    return render(spec)


def inject_anomaly(series, spec_base, anomaly):
    """Re-render ``series`` with ``anomaly`` added to its injection history."""
    if anomaly.end > spec_base.length:
        raise ValueError("anomaly interval outside the series")
    return render(spec_base, tuple(series.anomalies) + (anomaly,))


def sensitivity_grid(base, amplitude_factors, frequency_factors, noise_factors):
    """Whole-series modifications over the Cartesian product of factors."""
    lists = (list(amplitude_factors), list(frequency_factors), list(noise_factors))
    if any(len(x) == 0 for x in lists):
        raise ValueError("factor lists must be non-empty")
    out = []
    for fa, ff, fn in itertools.product(*lists):
        anomalies = tuple(
            AnomalySpec(0, base.length, kind, fac)
            for kind, fac in zip(KINDS, (fa, ff, fn))
            if fac != 1.0
        )
        s = render(base, anomalies)
        s.meta = {"amplitude": fa, "frequency": ff, "noise": fn}
        out.append(s)
    return out


def reference_scenario(seed=0, train_length=5000, **overrides):
    """Default 4-D experiment: one frequency and two amplitude anomalies.

    Returns ``(spec, train_series, test_series)``. The training series is the
    anomaly-free signal of length ``train_length``; the test series is its
    first ``spec.length`` steps (same noise draws) with the anomalies injected.
    """
    spec = replace(SignalSpec(seed=seed), **overrides)
    train = generate_base(replace(spec, length=train_length))
    test = generate_base(spec)
    for a in REFERENCE_ANOMALIES:
        test = inject_anomaly(test, spec, a)
    return spec, train, test


REFERENCE_ANOMALIES = (
    AnomalySpec(190, 250, "frequency", 1.5),
    AnomalySpec(500, 580, "amplitude", 0.75),
    AnomalySpec(800, 880, "amplitude", 0.75),
)
