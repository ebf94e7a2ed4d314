"""Baselines sharing the FSCLB round loop: FedLinUCB (no sketch) and Random."""
from __future__ import annotations

import math

import numpy as np

from . import kernels
from .agent import BanditParams, argmax_first, check_arms, compute_beta
from .errors import InvalidState, NoArms, ProtocolError
from .protocol import FedLinDownload, FedLinUpload


class FedLinAgent:
    """FedLinUCB agent: full ``d x d`` gram increments and dense determinants.

    The confidence radius reuses :func:`compute_beta` with ``Delta = 0``.
    """

    def __init__(self, agent_id: int, params: BanditParams, theory: bool = False):
        self.id = agent_id
        self.params = params
        d = params.d
        self.V_global = params.lam * np.eye(d)
        self.V_global_inv = np.eye(d) / params.lam
        self.theta_hat = np.zeros(d)
        self.beta = compute_beta(params, 0.0)
        self.log_det_V = d * math.log(params.lam)
        self.dV_loc = np.zeros((d, d))
        self.db_loc = np.zeros(d)

    def select_arm(self, arms) -> int:
        arms = check_arms(arms, self.params.d, self.params.L)
        scores = kernels.dense_ucb_scores(self.theta_hat, self.V_global_inv, self.beta, arms)
        return argmax_first(scores)

    def local_update(self, x, r: float) -> None:
        x = np.asarray(x, dtype=np.float64).ravel()
        self.dV_loc += np.outer(x, x)
        self.db_loc += r * x

    def evaluate_trigger(self) -> tuple[float, bool]:
        sign, log_det1 = np.linalg.slogdet(self.V_global + self.dV_loc)
        if sign <= 0:
            raise InvalidState("information matrix is not positive definite")
        return float(log_det1), bool(log_det1 > math.log1p(self.params.alpha) + self.log_det_V)

    def make_upload(self, round_index: int) -> FedLinUpload:
        return FedLinUpload(self.id, round_index, self.dV_loc.copy(), self.db_loc.copy())

    def apply_download(self, msg: FedLinDownload) -> None:
        d = self.params.d
        if msg.V_inv.shape != (d, d) or msg.theta_hat.shape != (d,):
            raise ProtocolError(f"download shapes do not match d={d}")
        self.V_global_inv = np.array(msg.V_inv)
        self.V_global = np.linalg.inv(self.V_global_inv)
        self.V_global = 0.5 * (self.V_global + self.V_global.T)
        self.theta_hat = np.array(msg.theta_hat)
        self.log_det_V = float(msg.log_det)
        self.dV_loc = np.zeros((d, d))
        self.db_loc = np.zeros(d)


class FedLinServer:
    def __init__(self, params: BanditParams, theory: bool = False):
        self.params = params
        d = params.d
        self.V = params.lam * np.eye(d)
        self.b = np.zeros(d)
        self.uploads = 0

    def handle(self, msg):
        if not isinstance(msg, FedLinUpload):
            raise ProtocolError(f"FedLinUCB server cannot handle {type(msg).__name__}")
        d = self.params.d
        if msg.dV.shape != (d, d) or msg.db.shape != (d,):
            raise ProtocolError(f"upload shapes do not match d={d}")
        self.V += msg.dV
        self.b += msg.db
        V_inv = np.linalg.inv(self.V)
        theta = np.linalg.solve(self.V, self.b)
        sign, log_det = np.linalg.slogdet(self.V)
        if sign <= 0:
            raise InvalidState("server gram is not positive definite")
        self.uploads += 1
        return FedLinDownload(msg.agent_id, msg.round, V_inv, theta, float(log_det))


def random_select(arms, rng: np.random.Generator) -> int:
    n = len(arms)
    if n == 0:
        raise NoArms("empty decision set")
    return int(rng.integers(n))


class RandomAgent:
    """Uniform arm choice; never communicates."""

    def __init__(self, agent_id: int, params: BanditParams, rng: np.random.Generator):
        self.id = agent_id
        self.params = params
        self.rng = rng

    def select_arm(self, arms) -> int:
        return random_select(arms, self.rng)

    def local_update(self, x, r):
        pass

    def evaluate_trigger(self):
        return float("nan"), False
