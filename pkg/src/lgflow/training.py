"""Joint NLL training of the flow and the LG-LDM, plus checkpoint I/O.

Scored timesteps are t = k..T-1 (the first k observations only serve as
context). Scored step j = 1..N (N = T - k) is evaluated under
N(mu_j, I) with mu_j = A mu_{j-1} + b, so the first scored step already sits
one transition after mu_0. Losses are means over the scored steps.
"""

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import kernels
from .dynamics import LgLdm, mu_init
from .flow import (
    CouplingLayer,
    FlowModel,
    build_flow,
    context_windows,
    normalize_backward,
    normalize_cached,
)
from .nncore import Mlp, NonFiniteGradientError, adam_init, adam_step

FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)

# Synthetic column of the hyperparameter table; batch_size None = sequential.
SYNTHETIC_GRID = {
    "context": [20, 40, 100],
    "layers": [6, 8, 12],
    "hidden_layers": [1, 3],
    "hidden_size": [64, 128],
    "learn_b": [True, False],
    "batch_size": [None, 2048],
}


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite; ``checkpoint`` is the last finite state."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    context: int = 20
    layers: int = 6
    hidden_layers: int = 1
    hidden_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: Optional[int] = None  # None = sequential (one update per epoch)
    learn_b: bool = True
    seed: int = 0
    clamp: float = 5.0
    a_init: float = 0.9
    mu0_policy: str = "zero"

    def __post_init__(self):
        for name in ("context", "layers", "hidden_layers", "hidden_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0 or self.clamp <= 0:
            raise ValueError("learning_rate and clamp must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def regime(self):
        return "sequential" if self.batch_size is None else f"minibatch({self.batch_size})"


def grid_configs(base, grid):
    """Cartesian product of ``grid`` (field -> list of values) over ``base``."""
    names = list(grid)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(names) - known
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    out = []
    for combo in itertools.product(*(grid[n] for n in names)):
        cfg = asdict(base)
        cfg.update(zip(names, combo))
        out.append(TrainConfig(**cfg))
    return out


@dataclass
class LossResult:
    loss: float
    flow_grads: list
    grad_A: np.ndarray
    grad_b: np.ndarray
    carried_mu: np.ndarray
    nll: np.ndarray = field(repr=False)  # per scored step


def prepare_observations(values):
    """(T, D) float array; univariate series are duplicated into two channels."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2:
        raise ValueError("observations must be a (T, D) matrix")
    if values.shape[1] == 1:
        values = np.repeat(values, 2, axis=1)
    return values


def _objective(flow, ldm, x, ctx, mu_start):
    n, D = x.shape
    z, logdet, caches = normalize_cached(flow, x, ctx)
    traj = kernels.affine_recursion(ldm.A, ldm.b, mu_start, n + 1)
    mu = traj[1:]
    r = z - mu
    with np.errstate(over="ignore", invalid="ignore"):
        nll = 0.5 * D * LOG_2PI + 0.5 * np.sum(r * r, axis=1) - logdet
    loss = float(nll.mean())
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    flow_grads, _ = normalize_backward(flow, caches, r / n, np.full(n, -1.0 / n))
    lam = kernels.adjoint_recursion(ldm.A, -r / n)
    grad_A = lam.T @ traj[:-1]
    grad_b = lam.sum(axis=0)
    return LossResult(loss, flow_grads, grad_A, grad_b, traj[-1].copy(), nll)


def loss_sequential(flow, ldm, values, k):
    values = prepare_observations(values)
    ctx = context_windows(values, k)
    return _objective(flow, ldm, values[k:], ctx, mu_init(ldm))


def loss_minibatch(flow, ldm, values, k, start, batch_size, carried_mu):
    """Loss on scored steps ``start .. start + batch_size - 1`` (0-based).

    The mean trajectory is unrolled from ``carried_mu``, which is treated as a
    constant, so gradients to A and b stop at the batch boundary.
    """
    values = prepare_observations(values)
    n_scored = values.shape[0] - k
    if start < 0 or batch_size < 1 or start + batch_size > n_scored:
        raise ValueError(
            f"batch [{start}, {start + batch_size}) is not a contiguous range of the "
            f"{n_scored} scored steps"
        )
    lo, hi = k + start, k + start + batch_size
    # context for observation t is values[t-k:t]
    ctx = context_windows(values[lo - k:hi], k)
    return _objective(flow, ldm, values[lo:hi], ctx, np.asarray(carried_mu, dtype=np.float64))


def batch_starts(n_scored, batch_size):
    return [(s, min(batch_size, n_scored - s)) for s in range(0, n_scored, batch_size)]


@dataclass
class Checkpoint:
    flow: FlowModel
    ldm: LgLdm
    config: TrainConfig
    loss_history: list
    final_loss: float
    carried_mu: np.ndarray
    nll_threshold: float
    format_version: int = FORMAT_VERSION


def _trainables(flow, ldm):
    params = flow.params() + [ldm.A]
    if ldm.learn_b:
        params.append(ldm.b)
    return params


def _grads(res, ldm):
    g = res.flow_grads + [res.grad_A]
    if ldm.learn_b:
        g.append(res.grad_b)
    return g


def _snapshot(flow, ldm, config, history, values, k):
    res = loss_sequential(flow, ldm, values, k)
    return Checkpoint(flow.copy(), ldm.copy(), config, list(history), res.loss,
                      res.carried_mu, float(res.nll.max()))


def train(config, values, progress=None):
    """Minimise the NLL jointly over flow and LG-LDM parameters with Adam.

    ``progress`` is an optional callable ``(epoch, loss)`` invoked after every
    epoch. Raises :class:`TrainingDiverged` if the loss or a gradient becomes
    non-finite.
    """
    values = prepare_observations(values)
    T, D = values.shape
    k = config.context
    if T <= k + 1:
        raise ValueError(f"series length {T} must exceed context + 1 = {k + 1}")
    n_scored = T - k
    if config.batch_size is not None and config.batch_size > n_scored:
        raise ValueError(f"batch_size {config.batch_size} exceeds {n_scored} scored steps")

    flow = build_flow(D, k, config.layers, config.hidden_layers, config.hidden_size,
                      seed=config.seed, clamp=config.clamp)
    ldm = LgLdm.initial(D, config.a_init, config.learn_b, config.mu0_policy, config.seed)
    params = _trainables(flow, ldm)
    state = adam_init(params, config.learning_rate)
    ctx = context_windows(values, k)
    xs = values[k:]
    history = []
    last_good = [p.copy() for p in params]

    def diverged(epoch, err):
        for p, good in zip(params, last_good):
            p[...] = good
        try:
            ckpt = _snapshot(flow, ldm, config, history, values, k)
        except FloatingPointError:
            # the data itself overflows: keep the parameters, leave the loss undefined
            last = history[-1] if history else math.nan
            ckpt = Checkpoint(flow.copy(), ldm.copy(), config, list(history), last,
                              mu_init(ldm), math.nan)
        return TrainingDiverged(f"training diverged at epoch {epoch}: {err}", ckpt)

    for epoch in range(config.epochs):
        try:
            if config.batch_size is None:
                res = _objective(flow, ldm, xs, ctx, mu_init(ldm))
                last_good = [p.copy() for p in params]
                adam_step(params, _grads(res, ldm), state)
                epoch_loss = res.loss
            else:
                carried = mu_init(ldm)
                losses = []
                for start, size in batch_starts(n_scored, config.batch_size):
                    sl = slice(start, start + size)
                    res = _objective(flow, ldm, xs[sl], ctx[sl], carried)
                    last_good = [p.copy() for p in params]
                    adam_step(params, _grads(res, ldm), state)
                    carried = res.carried_mu
                    losses.append(res.loss)
                epoch_loss = float(np.mean(losses))
        except (FloatingPointError, NonFiniteGradientError) as err:
            raise diverged(epoch, err) from err
        history.append(epoch_loss)
        if progress is not None:
            progress(epoch, epoch_loss)

    try:
        return _snapshot(flow, ldm, config, history, values, k)
    except FloatingPointError as err:
        raise diverged(config.epochs, err) from err


# --- serialization -------------------------------------------------------

def _arr(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(d):
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def _net_dict(net):
    return {"weights": [_arr(w) for w in net.weights], "biases": [_arr(b) for b in net.biases]}


def _net_from(d):
    return Mlp([_unarr(w) for w in d["weights"]], [_unarr(b) for b in d["biases"]])


def checkpoint_to_dict(ckpt):
    return {
        "format_version": ckpt.format_version,
        "config": asdict(ckpt.config),
        "flow": {
            "dim": ckpt.flow.dim,
            "context": ckpt.flow.context,
            "layers": [
                {
                    "mask": layer.mask.tolist(),
                    "clamp": layer.clamp,
                    "scale_net": _net_dict(layer.scale_net),
                    "translate_net": _net_dict(layer.translate_net),
                }
                for layer in ckpt.flow.layers
            ],
        },
        "ldm": {
            "A": _arr(ckpt.ldm.A),
            "b": _arr(ckpt.ldm.b),
            "learn_b": ckpt.ldm.learn_b,
            "mu0_policy": ckpt.ldm.mu0_policy,
            "mu0_seed": ckpt.ldm.mu0_seed,
        },
        "loss_history": list(ckpt.loss_history),
        "final_loss": ckpt.final_loss,
        "carried_mu": _arr(ckpt.carried_mu),
        "nll_threshold": ckpt.nll_threshold,
    }


def checkpoint_from_dict(d):
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    fl = d["flow"]
    layers = [
        CouplingLayer(np.array(L["mask"]), _net_from(L["scale_net"]),
                      _net_from(L["translate_net"]), L["clamp"])
        for L in fl["layers"]
    ]
    ld = d["ldm"]
    ldm = LgLdm(_unarr(ld["A"]), _unarr(ld["b"]), ld["learn_b"], ld["mu0_policy"], ld["mu0_seed"])
    return Checkpoint(
        flow=FlowModel(layers, fl["dim"], fl["context"]),
        ldm=ldm,
        config=TrainConfig(**d["config"]),
        loss_history=list(d["loss_history"]),
        final_loss=d["final_loss"],
        carried_mu=_unarr(d["carried_mu"]),
        nll_threshold=d["nll_threshold"],
        format_version=version,
    )


def save_checkpoint(ckpt, path):
    with open(path, "w") as fh:
        json.dump(checkpoint_to_dict(ckpt), fh)


def load_checkpoint(path):
    with open(path) as fh:
        return checkpoint_from_dict(json.load(fh))


def write_loss_csv(ckpt, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(ckpt.loss_history):
            w.writerow([i, repr(loss)])
