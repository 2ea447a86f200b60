"""Conditional RealNVP-style flow z_t = F(x_t | W_t).

Each coupling layer keeps the masked coordinates ``a`` and maps the others by
``y_b = x_b * exp(s) + t`` where ``s`` (clamped to ``c * tanh(s / c)``) and ``t``
are MLPs of ``[x_a, ctx]``. The context ``ctx`` is the window of the previous
``k`` observations flattened time-major, oldest row first.

Functions accept one observation (``x`` of shape ``(D,)``, ``ctx`` of ``k*D``
values) or a batch (``x`` of shape ``(N, D)``, ``ctx`` of shape ``(N, k*D)``).
"""

from dataclasses import dataclass

import numpy as np

from .nncore import Mlp, init_params, mlp_backward, mlp_forward


@dataclass
class CouplingLayer:
    mask: np.ndarray  # 1 = passed through (conditioning), 0 = transformed
    scale_net: Mlp
    translate_net: Mlp
    clamp: float = 5.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.int64)
        self.pass_idx = np.flatnonzero(self.mask == 1)
        self.trans_idx = np.flatnonzero(self.mask == 0)
        if len(self.pass_idx) == 0 or len(self.trans_idx) == 0:
            raise ValueError("mask must contain at least one 0 and one 1")
        if self.clamp <= 0:
            raise ValueError("clamp must be positive")

    def copy(self):
        return CouplingLayer(self.mask.copy(), self.scale_net.copy(),
                             self.translate_net.copy(), self.clamp)


@dataclass
class FlowModel:
    layers: list
    dim: int
    context: int

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.scale_net.params())
            out.extend(layer.translate_net.params())
        return out

    def copy(self):
        return FlowModel([layer.copy() for layer in self.layers], self.dim, self.context)


def alternating_masks(dim, n_layers):
    """Even/odd coordinate split, complemented at every layer."""
    base = (np.arange(dim) % 2 == 0).astype(np.int64)
    return [base if i % 2 == 0 else 1 - base for i in range(n_layers)]


def build_flow(dim, context, n_layers=6, hidden_layers=1, hidden_size=64,
               seed=0, clamp=5.0, zero_init=True):
    """Flow with Glorot-initialised nets.

    With ``zero_init`` the last layer of every scale and translation net is
    zeroed, so the untrained flow is the identity with zero log-determinant.
    """
    if dim < 2:
        raise ValueError("flow needs dim >= 2; duplicate univariate channels first")
    if context < 1 or n_layers < 1:
        raise ValueError("context and n_layers must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for mask in alternating_masks(dim, n_layers):
        n_pass = int(mask.sum())
        dims = [n_pass + context * dim] + [hidden_size] * hidden_layers + [dim - n_pass]
        nets = []
        for _ in range(2):
            net = init_params(dims, int(rng.integers(2**31)))
            if zero_init:
                net.weights[-1][:] = 0.0
            nets.append(net)
        layers.append(CouplingLayer(mask, nets[0], nets[1], clamp))
    return FlowModel(layers, dim, context)


def context_windows(values, k):
    """Conditioning vectors for t = k..T-1, shape ``(T - k, k * D)``."""
    values = np.asarray(values, dtype=np.float64)
    T, D = values.shape
    if T <= k:
        raise ValueError(f"series of length {T} is too short for context {k}")
    win = np.lib.stride_tricks.sliding_window_view(values, k, axis=0)[: T - k]
    # sliding_window_view puts the window axis last: (N, D, k) -> (N, k, D)
    return np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(T - k, k * D)


def _batch(x, ctx):
    x = np.asarray(x, dtype=np.float64)
    ctx = np.asarray(ctx, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], ctx.reshape(1, -1), False
    if ctx.ndim != 2 or ctx.shape[0] != x.shape[0]:
        raise ValueError("batched x needs a matching (N, k*D) context")
    return x, ctx, True


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite value in flow evaluation")


def _nets(layer, cond, ctx):
    h = np.concatenate([cond, ctx], axis=1)
    s_raw, s_cache = mlp_forward(layer.scale_net, h)
    t, t_cache = mlp_forward(layer.translate_net, h)
    th = np.tanh(s_raw / layer.clamp)
    return layer.clamp * th, th, t, s_cache, t_cache


def _coupling_fwd(layer, x, ctx):
    if x.shape[1] != len(layer.mask):
        raise ValueError(f"x has {x.shape[1]} coordinates, layer expects {len(layer.mask)}")
    xa = x[:, layer.pass_idx]
    xb = x[:, layer.trans_idx]
    s, th, t, s_cache, t_cache = _nets(layer, xa, ctx)
    e = np.exp(s)
    y = x.copy()
    y[:, layer.trans_idx] = xb * e + t
    logdet = s.sum(axis=1)
    _check_finite(y, logdet)
    return y, logdet, (xb, e, th, s_cache, t_cache)


def coupling_forward(layer, x, ctx):
    x, ctx, batched = _batch(x, ctx)
    y, logdet, _ = _coupling_fwd(layer, x, ctx)
    return (y, logdet) if batched else (y[0], float(logdet[0]))


def coupling_inverse(layer, y, ctx):
    y, ctx, batched = _batch(y, ctx)
    if y.shape[1] != len(layer.mask):
        raise ValueError("dimension mismatch")
    s, _, t, _, _ = _nets(layer, y[:, layer.pass_idx], ctx)
    x = y.copy()
    x[:, layer.trans_idx] = (y[:, layer.trans_idx] - t) * np.exp(-s)
    logdet = -s.sum(axis=1)
    _check_finite(x, logdet)
    return (x, logdet) if batched else (x[0], float(logdet[0]))


def _coupling_bwd(layer, cache, dy, dlogdet):
    xb, e, th, s_cache, t_cache = cache
    dyb = dy[:, layer.trans_idx]
    ds = (dyb * xb * e + dlogdet[:, None]) * (1.0 - th**2)
    gs = mlp_backward(layer.scale_net, s_cache, ds)
    gt = mlp_backward(layer.translate_net, t_cache, dyb)
    n_pass = len(layer.pass_idx)
    dx = np.empty_like(dy)
    dx[:, layer.pass_idx] = dy[:, layer.pass_idx] + gs.input[:, :n_pass] + gt.input[:, :n_pass]
    dx[:, layer.trans_idx] = dyb * e
    return dx, gs.params() + gt.params()


def normalize(model, x, ctx):
    x, ctx, batched = _batch(x, ctx)
    total = np.zeros(x.shape[0])
    for layer in model.layers:
        x, logdet, _ = _coupling_fwd(layer, x, ctx)
        total += logdet
    return (x, total) if batched else (x[0], float(total[0]))


def generate(model, z, ctx):
    z, ctx, batched = _batch(z, ctx)
    for layer in reversed(model.layers):
        z, _ = coupling_inverse(layer, z, ctx)
    return z if batched else z[0]


def normalize_cached(model, x, ctx):
    """Batched ``normalize`` that also returns the caches needed for backprop."""
    x, ctx, _ = _batch(x, ctx)
    total = np.zeros(x.shape[0])
    caches = []
    for layer in model.layers:
        x, logdet, cache = _coupling_fwd(layer, x, ctx)
        total += logdet
        caches.append(cache)
    return x, total, caches


def normalize_backward(model, caches, dz, dlogdet):
    """Parameter gradients of ``sum(dz * z) + sum(dlogdet * total_logdet)``.

    Returns a list aligned with ``model.params()`` and the gradient w.r.t. the
    observations.
    """
    dz = np.asarray(dz, dtype=np.float64)
    dlogdet = np.asarray(dlogdet, dtype=np.float64)
    grads = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        dz, g = _coupling_bwd(layer, cache, dz, dlogdet)
        grads.append(g)
    flat = []
    for g in reversed(grads):
        flat.extend(g)
    return flat, dz
