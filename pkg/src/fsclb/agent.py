"""Per-agent side of FSCLB: UCB selection, local SCFD buffer, determinant trigger."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidConfidence, InvalidVector, NoArms, ProtocolError
from .protocol import DownloadMsg, UploadMsg
from .spectral import wide_singular_values
from .sketch import SCFD, SketchState, logdet_from_singvals, scfd_append


@dataclass(frozen=True)
class BanditParams:
    d: int
    l: int
    M: int
    lam: float = 1.0
    alpha: float = 1.0
    delta_conf: float = 0.01
    R: float = 0.1
    S_norm: float = 1.0
    L: float = 1.0
    T: int = 20000

    def __post_init__(self):
        if self.d < 1 or self.M < 1 or self.T < 1:
            raise ValueError("d, M and T must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def check_sketch_size(self):
        if not 1 <= self.l < self.d:
            raise ValueError(f"sketch size must satisfy 1 <= l < d, got l={self.l}, d={self.d}")


def compute_beta(params: BanditParams, Delta: float = 0.0) -> float:
    """Confidence radius for an agent whose downloaded matrix carries truncation mass ``Delta``."""
    if not 0.0 < params.delta_conf < 1.0:
        raise InvalidConfidence(f"delta must lie in (0, 1), got {params.delta_conf}")
    if Delta < 0:
        raise ValueError("Delta must be nonnegative")
    p = params
    alpha_t = min(p.alpha, 1.0)
    m_tilde = math.sqrt(1.0 + p.M * p.alpha) + p.M * math.sqrt(2.0 * p.alpha)
    log_term = math.log((1.0 + p.T * p.L ** 2 / (alpha_t * p.lam)) / p.delta_conf)
    sqrt_lam = math.sqrt(p.lam)
    return (m_tilde * (p.R * math.sqrt(p.d * log_term) + sqrt_lam * p.S_norm)
            + (sqrt_lam + math.sqrt(Delta / p.lam)) * p.S_norm)


TIE_RTOL = 1e-12


def argmax_first(scores) -> int:
    """Lowest index whose score is within roundoff of the maximum.

    Exact ties (e.g. equal-norm arms under the initial ridge prior) must not
    be decided by last-bit differences between kernels.
    """
    scores = np.asarray(scores)
    top = scores.max()
    return int(np.flatnonzero(scores >= top - TIE_RTOL * (1.0 + abs(top)))[0])


def check_arms(arms, d: int, L: float) -> np.ndarray:
    arms = np.asarray(arms, dtype=np.float64)
    if arms.ndim == 1:
        arms = arms[None, :]
    if arms.shape[0] == 0:
        raise NoArms("empty decision set")
    if arms.shape[1] != d:
        raise InvalidVector(f"arms must be {d}-dimensional, got {arms.shape[1]}")
    if np.max(np.einsum("ij,ij->i", arms, arms)) > (L + 1e-9) ** 2:
        raise InvalidVector(f"arm norm exceeds L={L}")
    return arms


class FSCLBAgent:
    """One FSCLB agent.

    Policy fields (``S_m``, ``Hdiag``, ``Delta``, ``theta_hat``, ``beta``,
    ``log_det_V``) change only in :meth:`apply_download`.  ``det_path`` forces
    the trigger's determinant route: ``"auto"``, ``"svd"`` or ``"dense"``.
    """

    def __init__(self, agent_id: int, params: BanditParams, theory: bool = False,
                 det_path: str = "auto", shrink_index: int | None = None):
        params.check_sketch_size()
        if det_path not in ("auto", "svd", "dense"):
            raise ValueError(f"unknown det_path {det_path!r}")
        self.id = agent_id
        self.params = params
        self.det_path = det_path
        l, d = params.l, params.d
        self.S_m = np.zeros((l, d))
        self.Hdiag = np.full(l, 1.0 / params.lam)
        self.Delta = 0.0
        self.theta_hat = np.zeros(d)
        self.beta = compute_beta(params, 0.0)
        self.log_det_V = d * math.log(params.lam)
        self.local = SketchState.zeros(l, d, SCFD, shrink_index)
        self.b_loc = np.zeros(d)
        self.theory_gram = np.zeros((d, d)) if theory else None

    @property
    def uses_svd_path(self) -> bool:
        if self.det_path == "auto":
            return self.params.l < 0.4 * self.params.d
        return self.det_path == "svd"

    def select_arm(self, arms) -> int:
        p = self.params
        arms = check_arms(arms, p.d, p.L)
        scores = kernels.ucb_scores(self.theta_hat, self.S_m, self.Hdiag,
                                    p.lam + self.Delta, self.beta, arms)
        return argmax_first(scores)

    def bonus_quadform(self, arms) -> np.ndarray:
        return kernels.woodbury_quadform(self.S_m, self.Hdiag, self.params.lam + self.Delta, arms)

    def local_update(self, x, r: float) -> None:
        x = np.asarray(x, dtype=np.float64).ravel()
        self.local = scfd_append(self.local, x)
        self.b_loc = self.b_loc + r * x
        if self.theory_gram is not None:
            self.theory_gram += np.outer(x, x)

    def evaluate_trigger(self) -> tuple[float, bool]:
        """Returns ``(log det_1, fire)``; fires iff det_1 > (1 + alpha) det(V_m)."""
        p = self.params
        rho = self.local.rho
        if self.uses_svd_path:
            stack = np.vstack([self.S_m, self.local.S])
            sv = wide_singular_values(stack)
            log_det1 = logdet_from_singvals(sv, p.lam + rho + self.Delta, p.d)
        else:
            V = self.policy_gram()
            V += self.local.S.T @ self.local.S
            V[np.diag_indices_from(V)] += rho
            log_det1 = float(np.linalg.slogdet(V)[1])
        fire = log_det1 > math.log1p(p.alpha) + self.log_det_V
        return log_det1, bool(fire)

    def make_upload(self, round_index: int) -> UploadMsg:
        return UploadMsg(self.id, round_index, self.local.S.copy(), float(self.local.rho),
                         self.b_loc.copy(),
                         None if self.theory_gram is None else self.theory_gram.copy())

    def apply_download(self, msg: DownloadMsg) -> None:
        p = self.params
        if msg.S.shape != (p.l, p.d) or msg.theta_hat.shape != (p.d,) or msg.Hdiag.shape != (p.l,):
            raise ProtocolError(
                f"download shapes S{msg.S.shape} theta{msg.theta_hat.shape} H{msg.Hdiag.shape} "
                f"do not match l={p.l}, d={p.d}")
        self.S_m = np.array(msg.S, dtype=np.float64)
        self.Hdiag = np.array(msg.Hdiag, dtype=np.float64)
        self.Delta = float(msg.Delta)
        self.theta_hat = np.array(msg.theta_hat, dtype=np.float64)
        self.log_det_V = float(msg.log_det)
        self.beta = compute_beta(p, self.Delta)
        self.local.reset()
        self.b_loc = np.zeros(p.d)
        if self.theory_gram is not None:
            self.theory_gram[:] = 0.0

    # dense views, for checks only
    def policy_gram(self) -> np.ndarray:
        V = self.S_m.T @ self.S_m
        V[np.diag_indices_from(V)] += self.params.lam + self.Delta
        return V

    def local_gram(self) -> np.ndarray:
        G = self.local.S.T @ self.local.S
        G[np.diag_indices_from(G)] += self.local.rho
        return G
