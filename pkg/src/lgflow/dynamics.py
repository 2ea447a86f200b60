"""Linear-Gaussian latent dynamics: mu_t = A mu_{t-1} + b with identity covariance."""

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass
class LgLdm:
    A: np.ndarray
    b: np.ndarray
    learn_b: bool = True
    mu0_policy: str = "zero"  # "zero" or "sampled"
    mu0_seed: int = 0

    def __post_init__(self):
        self.A = np.array(self.A, dtype=np.float64)
        self.b = np.array(self.b, dtype=np.float64)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError("b must match A")
        if self.mu0_policy not in ("zero", "sampled"):
            raise ValueError(f"unknown mu0 policy {self.mu0_policy!r}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("LG-LDM parameters must be finite")

    @property
    def dim(self):
        return self.A.shape[0]

    @classmethod
    def initial(cls, dim, a_scale=0.9, learn_b=True, mu0_policy="zero", mu0_seed=0):
        return cls(a_scale * np.eye(dim), np.zeros(dim), learn_b, mu0_policy, mu0_seed)

    def copy(self):
        return LgLdm(self.A.copy(), self.b.copy(), self.learn_b, self.mu0_policy, self.mu0_seed)


def mu_init(model):
    if model.mu0_policy == "zero":
        return np.zeros(model.dim)
    return np.random.default_rng(model.mu0_seed).standard_normal(model.dim)


def step(model, mu_prev):
    mu_prev = np.asarray(mu_prev, dtype=np.float64)
    if mu_prev.shape != (model.dim,):
        raise ValueError(f"expected a length-{model.dim} mean, got shape {mu_prev.shape}")
    return model.A @ mu_prev + model.b


def unroll(model, mu0, T):
    """Mean trajectory of length ``T`` starting at ``mu0`` (row 0 is ``mu0``)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    mu0 = np.asarray(mu0, dtype=np.float64)
    if mu0.shape != (model.dim,):
        raise ValueError("mu0 does not match the model dimension")
    return kernels.affine_recursion(model.A, model.b, mu0, T)


def closed_form(model, mu0, t):
    """A^t mu0 + sum_{j<t} A^j b, accumulated by repeated matrix-vector products."""
    if t < 0:
        raise ValueError("t must be >= 0")
    head = np.array(mu0, dtype=np.float64)
    power_b = model.b.copy()
    tail = np.zeros(model.dim)
    for _ in range(t):
        head = model.A @ head
        tail += power_b
        power_b = model.A @ power_b
    return head + tail


def fixed_point(model):
    """(I - A)^{-1} b, the limit of the trajectory when rho(A) < 1."""
    return np.linalg.solve(np.eye(model.dim) - model.A, model.b)


def spectral_radius(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("spectral radius needs a square matrix")
    # LAPACK eigenvalues; raises LinAlgError if the QR iteration fails.
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def whiten(z, mu):
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if z.shape != mu.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {mu.shape}")
    return z - mu
