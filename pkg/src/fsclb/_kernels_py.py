"""Pure numpy implementations of the per-round kernels.

Mirrors ``_kernels.pyx`` function for function; ``fsclb.kernels`` picks one
at import time.
"""
import numpy as np


def woodbury_quadform(S, H, c, X):
    X = np.atleast_2d(X)
    P = X @ S.T
    q = (np.einsum("ij,ij->i", X, X) - (P * P) @ H) / c
    return np.maximum(q, 0.0)


def ucb_scores(theta, S, H, c, beta, X):
    X = np.atleast_2d(X)
    return X @ theta + beta * np.sqrt(woodbury_quadform(S, H, c, X))


def dense_ucb_scores(theta, Vinv, beta, X):
    X = np.atleast_2d(X)
    q = np.maximum(np.einsum("ij,ij->i", X @ Vinv, X), 0.0)
    return X @ theta + beta * np.sqrt(q)


def logdet_from_singvals(sv, c, d):
    sv = np.asarray(sv, dtype=np.float64)
    return float((d - sv.size) * np.log(c) + np.log(sv * sv + c).sum())


def shrink_rows(s, Vt, delta, l):
    k = min(l, s.shape[0])
    out = np.zeros((l, Vt.shape[1]))
    shrunk = np.sqrt(np.maximum(s[:k] * s[:k] - delta, 0.0))
    out[:k] = shrunk[:, None] * Vt[:k]
    return out
