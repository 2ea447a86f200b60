"""Pure numpy implementations of the hot loops in ``_ckernels.pyx``.

Signatures and results match the compiled module; this is the fallback used
when the extension is not built or ``LGFLOW_PURE_PYTHON`` is set.
"""

import numpy as np

# Rows per dominance block; bounds the (block, n, d) boolean temporary.
_BLOCK = 256


def orthant_ks(x, ref):
    n = x.shape[0]
    best = 0.0
    for lo in range(0, n, _BLOCK):
        pts = x[lo:lo + _BLOCK]
        le = np.all(x[None, :, :] <= pts[:, None, :], axis=2)
        eq = np.all(x[None, :, :] == pts[:, None, :], axis=2)
        n_le = le.sum(axis=1)
        n_lt = n_le - (le & eq).sum(axis=1)
        f = ref[lo:lo + _BLOCK]
        best = max(best, np.abs(n_le / n - f).max(), np.abs(n_lt / n - f).max())
    return float(best)


def window_ks(x, ref, w, stride):
    n_win = (x.shape[0] - w) // stride + 1
    out = np.empty(n_win)
    for m in range(n_win):
        s = m * stride
        out[m] = orthant_ks(x[s:s + w], ref[s:s + w])
    return out


def affine_recursion(A, b, mu0, n):
    out = np.empty((n, A.shape[0]))
    out[0] = mu0
    for t in range(1, n):
        out[t] = A @ out[t - 1] + b
    return out


def adjoint_recursion(A, g):
    out = np.empty_like(g)
    n = g.shape[0]
    if n == 0:
        return out
    out[-1] = g[-1]
    At = A.T
    for t in range(n - 2, -1, -1):
        out[t] = g[t] + At @ out[t + 1]
    return out
