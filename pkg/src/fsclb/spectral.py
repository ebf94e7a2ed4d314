"""Dense linear-algebra helpers: thin SVD, PSD ordering and the spectral tail error."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidMatrix, InvalidSpectrum

# Singular values / eigenvalues below this fraction of the largest are treated as
# exact zeros (numerical rank cutoff).
RANK_RTOL = 1e-10


class SvdResult(NamedTuple):
    U: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise InvalidMatrix(f"expected a non-empty 2-D matrix, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise InvalidMatrix("matrix has non-finite entries")
    return A


def thin_svd(A) -> SvdResult:
    """Economy SVD, ``k = min(rows, cols)`` singular values in nonincreasing order."""
    A = _as_matrix(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return SvdResult(U, s, Vt)


def singular_values(A) -> np.ndarray:
    return np.linalg.svd(_as_matrix(A), compute_uv=False)


def wide_singular_values(A: np.ndarray) -> np.ndarray:
    """Singular values of a short, wide matrix via the small Gram ``A A^T``.

    Much cheaper than a full SVD when rows << cols. Squaring costs accuracy
    only for values near roundoff of the largest, which is harmless when the
    caller adds a positive shift to ``s**2`` (as the determinant routes do).
    """
    if A.shape[0] >= A.shape[1]:
        return np.linalg.svd(A, compute_uv=False)
    ev = np.linalg.eigvalsh(A @ A.T)[::-1]
    return np.sqrt(np.clip(ev, 0.0, None))


def clean_spectrum(values: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Zero out entries at or below ``rtol`` times the largest magnitude.

    Used so that rank-deficient inputs produce exact zeros rather than
    roundoff-level residue.
    """
    values = np.array(values, dtype=np.float64)
    if values.size == 0:
        return values
    top = np.max(np.abs(values))
    if top == 0.0:
        return values
    values[np.abs(values) <= rtol * top] = 0.0
    return values


def min_eig_gap(A, B) -> float:
    """Smallest eigenvalue of the symmetrised difference ``A - B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidMatrix(f"shape mismatch: {A.shape} vs {B.shape}")
    D = A - B
    D = 0.5 * (D + D.T)
    return float(np.linalg.eigvalsh(D)[0])


def psd_dominates(A, B, tol: float = 1e-9) -> bool:
    """True iff ``A - B`` is PSD up to ``tol * (1 + ||A||_2)``."""
    gap = min_eig_gap(A, B)
    scale = 1.0 + np.linalg.norm(np.asarray(A, dtype=np.float64), 2)
    return gap >= -tol * scale


def gram_spectrum(G) -> np.ndarray:
    """Eigenvalues of a symmetric PSD matrix, nonincreasing, roundoff cleaned."""
    G = _as_matrix(G)
    eigs = np.linalg.eigvalsh(0.5 * (G + G.T))[::-1]
    return clean_spectrum(eigs)


def spectral_error(eigs, lam: float, l: int, convention: str = "tail") -> float:
    """Normalised spectral tail error of a covariance spectrum.

    ``convention="tail"`` (default) sums the eigenvalues beyond the top ``k``;
    ``convention="smallest"`` sums the ``k + 1`` smallest eigenvalues instead.
    The result is the minimum over ``k = 0 .. l-1`` of that sum divided by
    ``lam * (l - k)``.  Values under the relative rank cutoff count as zero,
    so a spectrum of numerical rank below ``l`` gives exactly 0.
    """
    eigs = np.sort(np.asarray(eigs, dtype=np.float64).ravel())[::-1]
    d = eigs.size
    if lam <= 0:
        raise InvalidSpectrum("lambda must be positive")
    if not 1 <= l <= d:
        raise InvalidSpectrum(f"need 1 <= l <= d, got l={l}, d={d}")
    if not np.isfinite(eigs).all():
        raise InvalidSpectrum("non-finite eigenvalue")
    floor = -1e-10 * max(float(np.max(np.abs(eigs))), 1.0)
    if eigs[-1] < floor:
        raise InvalidSpectrum(f"negative eigenvalue {eigs[-1]:.3e}")
    eigs = clean_spectrum(np.maximum(eigs, 0.0))

    best = np.inf
    for k in range(l):
        if convention == "tail":
            mass = eigs[k:].sum()
        elif convention == "smallest":
            mass = eigs[d - k - 1:].sum()
        else:
            raise ValueError(f"unknown convention {convention!r}")
        best = min(best, mass / (lam * (l - k)))
    return float(best)
