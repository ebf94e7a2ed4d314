import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from fsclb import _kernels_py, kernels

try:
    from fsclb import _kernels as _kc
except ImportError:  # pragma: no cover - extension not built
    _kc = None

needs_ext = pytest.mark.skipif(_kc is None, reason="compiled extension not built")


def _case(rng, l=5, d=13, n=9):
    _, s, Vt = np.linalg.svd(rng.standard_normal((l, d)), full_matrices=False)
    S = s[:, None] * Vt
    c = 1.7
    H = 1.0 / (s ** 2 + c)
    X = rng.standard_normal((n, d))
    return S, H, c, X


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


def test_python_backend_against_dense(rng):
    S, H, c, X = _case(rng)
    V = c * np.eye(S.shape[1]) + S.T @ S
    q = np.einsum("ij,ij->i", X, np.linalg.solve(V, X.T).T)
    np.testing.assert_allclose(_kernels_py.woodbury_quadform(S, H, c, X), q, rtol=1e-10)
    theta = rng.standard_normal(S.shape[1])
    ucb = X @ theta + 2.0 * np.sqrt(q)
    np.testing.assert_allclose(_kernels_py.ucb_scores(theta, S, H, c, 2.0, X), ucb, rtol=1e-10)
    np.testing.assert_allclose(_kernels_py.dense_ucb_scores(theta, np.linalg.inv(V), 2.0, X),
                               ucb, rtol=1e-9)
    sv = np.array([3.0, 1.0, 0.0])
    assert _kernels_py.logdet_from_singvals(sv, 2.0, 5) == pytest.approx(
        np.log(11.0) + np.log(3.0) + 3 * np.log(2.0))


@needs_ext
def test_backends_agree(rng):
    for _ in range(20):
        l, d, n = (int(v) for v in rng.integers(1, 30, size=3))
        l = min(l, d)
        S, H, c, X = _case(rng, l, d, n)
        theta = rng.standard_normal(d)
        np.testing.assert_allclose(_kc.woodbury_quadform(S, H, c, X),
                                   _kernels_py.woodbury_quadform(S, H, c, X), rtol=1e-12)
        np.testing.assert_allclose(_kc.ucb_scores(theta, S, H, c, 0.7, X),
                                   _kernels_py.ucb_scores(theta, S, H, c, 0.7, X), rtol=1e-12)
        Vinv = np.linalg.inv(c * np.eye(d) + S.T @ S)
        np.testing.assert_allclose(_kc.dense_ucb_scores(theta, Vinv, 0.7, X),
                                   _kernels_py.dense_ucb_scores(theta, Vinv, 0.7, X),
                                   rtol=1e-12)
        sv = np.ascontiguousarray(np.sort(rng.exponential(size=l))[::-1])
        assert _kc.logdet_from_singvals(sv, c, d) == pytest.approx(
            _kernels_py.logdet_from_singvals(sv, c, d), rel=1e-13)
        B = rng.standard_normal((l + 1, d))
        _, s, Vt = np.linalg.svd(B, full_matrices=False)
        delta = float(s[min(l, s.size) - 1] ** 2)
        np.testing.assert_allclose(_kc.shrink_rows(s, Vt, delta, l),
                                   _kernels_py.shrink_rows(s, Vt, delta, l), atol=1e-13)


@needs_ext
def test_wrapper_accepts_noncontiguous(rng):
    S, H, c, X = _case(rng)
    Xf = np.asfortranarray(X)
    np.testing.assert_allclose(kernels.woodbury_quadform(S, H, c, Xf),
                               _kernels_py.woodbury_quadform(S, H, c, X), rtol=1e-12)


def test_pure_python_switch():
    code = "import fsclb.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, FSCLB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_reload_without_env():
    mod = importlib.reload(kernels)
    assert mod.BACKEND == ("cython" if _kc is not None else "python")
