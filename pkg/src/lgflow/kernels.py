"""Backend selection for the numerical hot loops.

The compiled Cython module is used when it imports cleanly; otherwise (or when
the ``LGFLOW_PURE_PYTHON`` environment variable is set to a non-empty value)
the numpy fallback is used. ``BACKEND`` names the active implementation.

All kernels take C-contiguous float64 arrays; the wrappers here coerce inputs.
"""

import os

import numpy as np

from . import _pykernels

_compiled = None
if not os.environ.get("LGFLOW_PURE_PYTHON"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if _compiled is not None else "python"


def _resolve(impl):
    if impl is None:
        return _impl
    if isinstance(impl, str):
        return implementations()[impl]
    return impl


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def orthant_ks(x, ref, impl=None):
    """Max deviation between the orthant ECDF of ``x`` and ``ref`` at sample points.

    ``ref[i]`` is the reference CDF evaluated at ``x[i]``. Both the closed
    (componentwise ``<=``) and the left-limit count (points equal to ``x[i]`` in
    every coordinate removed) are compared.
    """
    return _resolve(impl).orthant_ks(_c(x), _c(ref))


def window_ks(x, ref, w, stride, impl=None):
    """``orthant_ks`` on every window ``x[m*stride : m*stride + w]``."""
    return np.asarray(_resolve(impl).window_ks(_c(x), _c(ref), int(w), int(stride)))


def affine_recursion(A, b, mu0, n, impl=None):
    """Rows ``mu[0] = mu0``, ``mu[t] = A @ mu[t-1] + b`` for ``t < n``."""
    return np.asarray(_resolve(impl).affine_recursion(_c(A), _c(b), _c(mu0), int(n)))


def adjoint_recursion(A, g, impl=None):
    """Reverse sweep ``lam[-1] = g[-1]``, ``lam[t] = g[t] + A.T @ lam[t+1]``."""
    return np.asarray(_resolve(impl).adjoint_recursion(_c(A), _c(g)))


def implementations():
    """Built backends keyed by name, regardless of which one is active."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        return out
    out["cython"] = _ckernels
    return out
