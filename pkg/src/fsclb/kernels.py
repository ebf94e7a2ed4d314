"""Backend selection for the per-round kernels.

The compiled Cython module is used when it was built; otherwise (or when the
``FSCLB_PURE_PYTHON`` environment variable is set to a non-empty value other
than ``0``) the numpy fallback is used.  ``BACKEND`` names the active one.

The compiled matrix-vector kernels are scalar loops.  They beat numpy while
call overhead dominates, but lose to BLAS once the flop count is large, so
calls above ``BLAS_CUTOVER`` multiply-adds go to the numpy versions even
when the extension is present (see ``benchmarks/bench_kernels.py``).
"""
import os

import numpy as np

from . import _kernels_py

_force_py = os.environ.get("FSCLB_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


BLAS_CUTOVER = 16384


def _pick(flops):
    return _impl if flops <= BLAS_CUTOVER else _kernels_py


def woodbury_quadform(S, H, c, X):
    X = _c(np.atleast_2d(X))
    S = _c(S)
    return _pick(X.shape[0] * S.size).woodbury_quadform(S, _c(H), float(c), X)


def ucb_scores(theta, S, H, c, beta, X):
    X = _c(np.atleast_2d(X))
    S = _c(S)
    return _pick(X.shape[0] * S.size).ucb_scores(_c(theta), S, _c(H), float(c), float(beta), X)


def dense_ucb_scores(theta, Vinv, beta, X):
    X = _c(np.atleast_2d(X))
    Vinv = _c(Vinv)
    # a single d x d matvec already favours BLAS beyond tiny d
    return _pick(4 * X.shape[0] * Vinv.size).dense_ucb_scores(_c(theta), Vinv, float(beta), X)


def logdet_from_singvals(sv, c, d):
    return float(_impl.logdet_from_singvals(_c(np.ravel(sv)), float(c), int(d)))


def shrink_rows(s, Vt, delta, l):
    return _impl.shrink_rows(_c(s), _c(Vt), float(delta), int(l))
