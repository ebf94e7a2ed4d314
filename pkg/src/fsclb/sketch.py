"""SCFD / FD sketches: row append, sketch merge, log-determinants and Woodbury solves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidMatrix, InvalidRegularizer, InvalidState, InvalidVector
from .spectral import clean_spectrum

SCFD = "scfd"
FD = "fd"


@dataclass
class SketchState:
    """An ``l x d`` sketch ``S`` plus the accumulated truncation mass ``rho``.

    In SCFD mode ``S.T @ S + rho * I`` over-approximates the gram of the rows
    fed in; FD mode never accumulates ``rho``.  ``shrink_index`` picks which
    singular value is subtracted on each shrink: ``l`` (default) or ``l + 1``.
    """

    l: int
    d: int
    S: np.ndarray = field(default=None, repr=False)
    rho: float = 0.0
    mode: str = SCFD
    shrink_index: int | None = None

    def __post_init__(self):
        if self.S is None:
            self.S = np.zeros((self.l, self.d))
        else:
            self.S = np.array(self.S, dtype=np.float64)
        if self.S.shape != (self.l, self.d):
            raise InvalidMatrix(f"sketch must be {self.l}x{self.d}, got {self.S.shape}")
        if self.mode not in (SCFD, FD):
            raise ValueError(f"unknown sketch mode {self.mode!r}")
        if self.shrink_index is None:
            self.shrink_index = self.l

    @classmethod
    def zeros(cls, l, d, mode=SCFD, shrink_index=None):
        return cls(l, d, None, 0.0, mode, shrink_index)

    def copy(self) -> "SketchState":
        return SketchState(self.l, self.d, self.S.copy(), self.rho, self.mode, self.shrink_index)

    def reset(self) -> None:
        self.S = np.zeros((self.l, self.d))
        self.rho = 0.0


def shrink(B: np.ndarray, l: int, shrink_index: int):
    """SVD ``B``, subtract ``sigma_{shrink_index}^2`` from every squared singular value.

    Returns ``(S_new, delta, sigma_hat)``: the first ``l`` rows of
    ``sqrt(max(Sigma^2 - delta, 0)) V^T``, the subtracted mass and the ``l``
    singular values of ``S_new``.
    """
    _, s, Vt = np.linalg.svd(B, full_matrices=False)
    s = clean_spectrum(s)
    delta = float(s[shrink_index - 1] ** 2) if s.size >= shrink_index else 0.0
    S_new = kernels.shrink_rows(s, Vt, delta, l)
    sigma_hat = np.zeros(l)
    k = min(l, s.size)
    sigma_hat[:k] = np.sqrt(np.maximum(s[:k] ** 2 - delta, 0.0))
    return S_new, delta, sigma_hat


def scfd_append(state: SketchState, x) -> SketchState:
    """Append one row ``x``; returns a new state."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape != (state.d,):
        raise InvalidVector(f"expected a {state.d}-vector, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise InvalidVector("row has non-finite entries")
    B = np.vstack([state.S, x[None, :]])
    S_new, delta, _ = shrink(B, state.l, state.shrink_index)
    rho = state.rho + delta if state.mode == SCFD else state.rho
    return SketchState(state.l, state.d, S_new, rho, state.mode, state.shrink_index)


def scfd_merge(server: SketchState, incoming_S):
    """Double-sketch merge of an incoming ``l x d`` sketch into ``server``.

    Returns ``(new_state, delta)``.  ``new_state.rho`` is left untouched; the
    caller adds ``delta`` to its own accumulator.
    """
    incoming_S = np.asarray(incoming_S, dtype=np.float64)
    if incoming_S.shape != (server.l, server.d):
        raise InvalidMatrix(
            f"incoming sketch must be {server.l}x{server.d}, got {incoming_S.shape}")
    B = np.vstack([server.S, incoming_S])
    S_new, delta, _ = shrink(B, server.l, server.shrink_index)
    return SketchState(server.l, server.d, S_new, server.rho, server.mode,
                       server.shrink_index), delta


def logdet_from_singvals(sv, c: float, d: int) -> float:
    """``log det(c I_d + B^T B)`` given the singular values ``sv`` of ``B``."""
    if not c > 0:
        raise InvalidRegularizer(f"regulariser must be positive, got {c}")
    sv = np.asarray(sv, dtype=np.float64).ravel()
    if sv.size > d:
        raise InvalidRegularizer(f"{sv.size} singular values exceed dimension {d}")
    return kernels.logdet_from_singvals(sv, c, d)


def det_from_singvals(sv, c: float, d: int) -> float:
    """Exponentiated :func:`logdet_from_singvals`; overflows for large ``d``."""
    return float(np.exp(logdet_from_singvals(sv, c, d)))


def _check_core(S, Hdiag):
    S = np.asarray(S, dtype=np.float64)
    Hdiag = np.asarray(Hdiag, dtype=np.float64).ravel()
    if S.ndim != 2 or Hdiag.shape != (S.shape[0],):
        raise InvalidState(f"H has {Hdiag.size} entries for a sketch of shape {S.shape}")
    return S, Hdiag


def woodbury_inverse_apply(S, Hdiag, c: float, v) -> np.ndarray:
    """``(c I + S^T S)^{-1} v`` computed as ``(v - S^T diag(H) S v) / c``."""
    S, Hdiag = _check_core(S, Hdiag)
    v = np.asarray(v, dtype=np.float64)
    return (v - S.T @ (Hdiag * (S @ v))) / c


def woodbury_quadform(S, Hdiag, c: float, v):
    """``v^T (c I + S^T S)^{-1} v``; ``v`` may be one vector or a stack of rows."""
    S, Hdiag = _check_core(S, Hdiag)
    v = np.asarray(v, dtype=np.float64)
    q = kernels.woodbury_quadform(S, Hdiag, c, v)
    return float(q[0]) if v.ndim == 1 else q


def core_diag(sigma_hat, c: float) -> np.ndarray:
    """The diagonal ``(sigma_hat^2 + c)^{-1}`` that pairs with a sketch in the Woodbury form."""
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    return 1.0 / (sigma_hat ** 2 + c)


def approx_gram(state: SketchState) -> np.ndarray:
    return state.S.T @ state.S + state.rho * np.eye(state.d)
