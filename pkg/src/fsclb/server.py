"""Server side of FSCLB: absorb an upload, double-sketch merge, emit the download."""
from __future__ import annotations

import math

import numpy as np

from .agent import BanditParams
from .errors import InvalidState, ProtocolError
from .protocol import DownloadMsg, UploadMsg
from .sketch import (SCFD, SketchState, core_diag, logdet_from_singvals,
                     shrink, woodbury_inverse_apply)


class FSCLBServer:
    """Global sketch ``S~`` (with ``rho~`` as its ``rho``) plus the uploaded truncation mass.

    ``Delta_ser`` is kept alongside ``rho_ser + rho~`` and cross-checked on
    every upload.
    """

    def __init__(self, params: BanditParams, theory: bool = False,
                 shrink_index: int | None = None):
        params.check_sketch_size()
        self.params = params
        l, d = params.l, params.d
        self.sketch = SketchState.zeros(l, d, SCFD, shrink_index)
        self.rho_ser = 0.0
        self.Delta_ser = 0.0
        self.b_ser = np.zeros(d)
        self.sigma_hat = np.zeros(l)
        self.Hdiag = np.full(l, 1.0 / params.lam)
        self.theta_hat = np.zeros(d)
        self.log_det_V = d * math.log(params.lam)
        self.theory_gram = np.zeros((d, d)) if theory else None
        self.uploads = 0

    @property
    def rho_tilde(self) -> float:
        return self.sketch.rho

    def handle(self, msg):
        if not isinstance(msg, UploadMsg):
            raise ProtocolError(f"FSCLB server cannot handle {type(msg).__name__}")
        return self.handle_upload(msg)

    def handle_upload(self, msg: UploadMsg) -> DownloadMsg:
        p = self.params
        if msg.S_loc.shape != (p.l, p.d) or np.shape(msg.b_loc) != (p.d,):
            raise ProtocolError(
                f"upload shapes S{msg.S_loc.shape} b{np.shape(msg.b_loc)} do not match "
                f"l={p.l}, d={p.d}")
        if not msg.rho_loc >= 0:
            raise ProtocolError(f"negative truncation mass {msg.rho_loc}")
        expected = self.rho_ser + self.sketch.rho
        if abs(self.Delta_ser - expected) > 1e-12 * max(1.0, expected):
            raise InvalidState(f"Delta_ser={self.Delta_ser} != rho_ser + rho~ = {expected}")

        self.rho_ser += msg.rho_loc
        B = np.vstack([self.sketch.S, msg.S_loc])
        S_new, delta, self.sigma_hat = shrink(B, p.l, self.sketch.shrink_index)
        self.sketch = SketchState(p.l, p.d, S_new, self.sketch.rho + delta,
                                  self.sketch.mode, self.sketch.shrink_index)
        self.Delta_ser = self.sketch.rho + self.rho_ser
        self.b_ser = self.b_ser + msg.b_loc
        c = p.lam + self.Delta_ser
        self.Hdiag = core_diag(self.sigma_hat, c)
        self.theta_hat = woodbury_inverse_apply(self.sketch.S, self.Hdiag, c, self.b_ser)
        self.log_det_V = logdet_from_singvals(self.sigma_hat, c, p.d)
        if self.theory_gram is not None and msg.exact_gram is not None:
            self.theory_gram += msg.exact_gram
        self.uploads += 1
        return self.download(msg.agent_id, msg.round)

    def download(self, agent_id: int = 0, round_index: int = 0) -> DownloadMsg:
        return DownloadMsg(agent_id, round_index, self.sketch.S.copy(), self.theta_hat.copy(),
                           self.log_det_V, self.Hdiag.copy(), self.Delta_ser)

    def gram(self) -> np.ndarray:
        """Dense ``(lam + Delta) I + S~^T S~``, for checks only."""
        V = self.sketch.S.T @ self.sketch.S
        V[np.diag_indices_from(V)] += self.params.lam + self.Delta_ser
        return V
